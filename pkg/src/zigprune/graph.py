"""Typed computation-graph IR.

A graph is a DAG of operator vertices. Vertices are categorized as stem
(trainable, width-changing: Conv2d / Linear), accessory (single-in single-out:
BatchNorm / ReLU / pooling / Flatten), joint (multi-input aggregators: Add and
Mul require equal input shapes, Concat stacks along the channel axis), unknown
(opaque custom op), or the terminal GraphOutput marker.

Graph documents are plain dicts (JSON-compatible). Schema:

    {
      "input_shapes": [[1, 3, 16, 16], ...],
      "vertices": [
        {"id": 0, "op": "conv2d", "kernel": 3, "stride": 1, "padding": 1,
         "in_channels": 3, "out_channels": 16, "has_bias": true,
         "name": "conv1", "params": {"weight": [[...]], "bias": [...]}},
        {"id": 1, "op": "batch_norm", "channels": 16},
        {"id": 2, "op": "relu"},
        ...
        {"id": 9, "op": "output"}
      ],
      "edges": [[0, 1], [1, 2], ...]
    }

Vertices with no incoming edge are graph-input consumers; each carries an
optional ``"input": i`` attribute naming the ``input_shapes`` entry it reads
(default 0), so several roots may share one input. The input order of a joint
vertex is the first-appearance order of its incoming edges in the edge list
(this fixes Concat channel layout).
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, fields
from typing import Iterator, Optional

import numpy as np

from .errors import (
    CycleDetected,
    DanglingEdge,
    FlattenWithoutKnownSpatialDims,
    GraphError,
    ShapeMismatchAtSDJoint,
    UnknownKindString,
)

# Vertex categories.
STEM = "stem"
ACCESSORY = "accessory"
SD_JOINT = "sd_joint"
SID_JOINT = "sid_joint"
UNKNOWN = "unknown"
OUTPUT = "output"


# ---------------------------------------------------------------------------
# Vertex kinds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv2d:
    kernel: int
    stride: int
    padding: int
    in_channels: int
    out_channels: int
    has_bias: bool = True

    op = "conv2d"
    category = STEM


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int
    has_bias: bool = True

    op = "linear"
    category = STEM


@dataclass(frozen=True)
class BatchNorm:
    channels: int

    op = "batch_norm"
    category = ACCESSORY


@dataclass(frozen=True)
class ReLU:
    op = "relu"
    category = ACCESSORY


@dataclass(frozen=True)
class MaxPool:
    kernel: int
    stride: int

    op = "max_pool"
    category = ACCESSORY


@dataclass(frozen=True)
class AvgPool:
    kernel: int
    stride: int

    op = "avg_pool"
    category = ACCESSORY


@dataclass(frozen=True)
class Flatten:
    op = "flatten"
    category = ACCESSORY


@dataclass(frozen=True)
class Add:
    op = "add"
    category = SD_JOINT


@dataclass(frozen=True)
class Mul:
    op = "mul"
    category = SD_JOINT


@dataclass(frozen=True)
class Concat:
    # channel/feature axis only
    op = "concat"
    category = SID_JOINT


@dataclass(frozen=True)
class Unknown:
    opname: str

    op = "unknown"
    category = UNKNOWN


@dataclass(frozen=True)
class GraphOutput:
    op = "output"
    category = OUTPUT


_KIND_BY_OP = {
    k.op: k
    for k in (Conv2d, Linear, BatchNorm, ReLU, MaxPool, AvgPool, Flatten,
              Add, Mul, Concat, Unknown, GraphOutput)
}

VertexKind = (Conv2d | Linear | BatchNorm | ReLU | MaxPool | AvgPool | Flatten
              | Add | Mul | Concat | Unknown | GraphOutput)


def output_width(kind: VertexKind) -> Optional[int]:
    """Channel/feature width produced by a stem, None for other kinds."""
    if isinstance(kind, Conv2d):
        return kind.out_channels
    if isinstance(kind, Linear):
        return kind.out_features
    return None


# ---------------------------------------------------------------------------
# Parameters and vertices
# ---------------------------------------------------------------------------

TRAINABLE_ROLES = ("weight", "bias", "gamma", "beta")


@dataclass
class ParameterSet:
    """Trainable tensors of one vertex.

    ``weight`` is 2-D with one row per output channel/feature; for Conv2d row j
    is the flattened jth 3-D filter laid out channel-major, so the k*k columns
    of input channel c occupy columns [c*k*k, (c+1)*k*k).
    """

    weight: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None

    def trainable_items(self) -> Iterator[tuple[str, np.ndarray]]:
        for role in TRAINABLE_ROLES:
            arr = getattr(self, role)
            if arr is not None:
                yield role, arr

    def trainable_count(self) -> int:
        return sum(arr.size for _, arr in self.trainable_items())

    def copy(self) -> "ParameterSet":
        kw = {}
        for f in fields(self):
            arr = getattr(self, f.name)
            kw[f.name] = None if arr is None else arr.copy()
        return ParameterSet(**kw)


@dataclass
class Vertex:
    id: int
    kind: VertexKind
    name: str = ""
    params: Optional[ParameterSet] = None
    out_shape: Optional[tuple[int, ...]] = None

    @property
    def category(self) -> str:
        return self.kind.category


@dataclass
class ComputationGraph:
    """Immutable-after-construction operator DAG.

    Structure (vertices, edges, shapes) is fixed once built and shape-inferred;
    parameter values may be rewritten in place by training.
    """

    vertices: dict[int, Vertex]
    edges: list[tuple[int, int]]
    input_shapes: list[tuple[int, ...]]
    input_binding: dict[int, int] = field(default_factory=dict)
    preds: dict[int, list[int]] = field(default_factory=dict, repr=False)
    succs: dict[int, list[int]] = field(default_factory=dict, repr=False)
    topo_order: list[int] = field(default_factory=list, repr=False)
    input_ids: list[int] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self._index()

    def _index(self) -> None:
        self.preds = {v: [] for v in self.vertices}
        self.succs = {v: [] for v in self.vertices}
        for src, dst in self.edges:
            if src not in self.vertices or dst not in self.vertices:
                raise DanglingEdge(f"edge ({src}, {dst}) references a missing vertex")
            self.preds[dst].append(src)
            self.succs[src].append(dst)
        self.topo_order = self._toposort()
        self.input_ids = sorted(
            v for v in self.vertices
            if not self.preds[v] and not isinstance(self.vertices[v].kind, GraphOutput)
        )
        for v in self.input_ids:
            self.input_binding.setdefault(v, 0)

    def _toposort(self) -> list[int]:
        indeg = {v: len(self.preds[v]) for v in self.vertices}
        ready = [v for v in sorted(self.vertices) if indeg[v] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            v = heapq.heappop(ready)
            order.append(v)
            for w in self.succs[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    heapq.heappush(ready, w)
        if len(order) != len(self.vertices):
            raise CycleDetected("graph contains a cycle")
        return order

    @property
    def topo_index(self) -> dict[int, int]:
        return {v: i for i, v in enumerate(self.topo_order)}

    @property
    def output_id(self) -> Optional[int]:
        outs = [v for v, vx in self.vertices.items() if isinstance(vx.kind, GraphOutput)]
        return outs[0] if outs else None

    def joint_input_order(self, vid: int) -> list[int]:
        """Incoming vertices in edge-list appearance order."""
        return [src for src, dst in self.edges if dst == vid]

    def trainable_param_count(self) -> int:
        return sum(
            vx.params.trainable_count() for vx in self.vertices.values() if vx.params is not None
        )


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

_KIND_ATTRS = {
    "conv2d": ("kernel", "stride", "padding", "in_channels", "out_channels", "has_bias"),
    "linear": ("in_features", "out_features", "has_bias"),
    "batch_norm": ("channels",),
    "max_pool": ("kernel", "stride"),
    "avg_pool": ("kernel", "stride"),
    "unknown": ("opname",),
}


def _kind_from_doc(vdoc: dict) -> VertexKind:
    op = vdoc.get("op")
    cls = _KIND_BY_OP.get(op)
    if cls is None:
        raise UnknownKindString(f"unrecognized op string {op!r}")
    attrs = _KIND_ATTRS.get(op, ())
    kw = {}
    for a in attrs:
        if a == "has_bias":
            kw[a] = bool(vdoc.get(a, True))
        else:
            if a not in vdoc:
                raise GraphError(f"op {op!r} requires attribute {a!r}")
            kw[a] = vdoc[a]
    return cls(**kw)


def _default_params(kind: VertexKind) -> Optional[ParameterSet]:
    if isinstance(kind, Conv2d):
        cols = kind.kernel * kind.kernel * kind.in_channels
        return ParameterSet(
            weight=np.zeros((kind.out_channels, cols)),
            bias=np.zeros(kind.out_channels) if kind.has_bias else None,
        )
    if isinstance(kind, Linear):
        return ParameterSet(
            weight=np.zeros((kind.out_features, kind.in_features)),
            bias=np.zeros(kind.out_features) if kind.has_bias else None,
        )
    if isinstance(kind, BatchNorm):
        c = kind.channels
        return ParameterSet(
            gamma=np.ones(c), beta=np.zeros(c),
            running_mean=np.zeros(c), running_var=np.ones(c),
        )
    return None


def _params_from_doc(kind: VertexKind, pdoc: Optional[dict]) -> Optional[ParameterSet]:
    base = _default_params(kind)
    if base is None:
        if pdoc:
            raise GraphError(f"op {kind.op!r} does not carry parameters")
        return None
    if pdoc is None:
        return base
    for key, val in pdoc.items():
        if not hasattr(base, key):
            raise GraphError(f"unknown parameter field {key!r}")
        ref = getattr(base, key)
        if ref is None:
            raise GraphError(f"op {kind.op!r} has no {key!r} tensor")
        arr = np.asarray(val, dtype=float)
        if arr.shape != ref.shape:
            raise GraphError(
                f"parameter {key!r} has shape {arr.shape}, expected {ref.shape}"
            )
        setattr(base, key, arr)
    return base


def build_graph(doc: dict) -> ComputationGraph:
    """Validate a graph document and construct the typed graph.

    Raises CycleDetected, DanglingEdge or UnknownKindString on malformed
    documents. Explicit ``op: "unknown"`` vertices are permitted; they are
    excluded from grouping downstream.
    """
    vertices: dict[int, Vertex] = {}
    binding: dict[int, int] = {}
    for vdoc in doc.get("vertices", []):
        vid = int(vdoc["id"])
        if vid in vertices:
            raise GraphError(f"duplicate vertex id {vid}")
        kind = _kind_from_doc(vdoc)
        params = _params_from_doc(kind, vdoc.get("params"))
        vertices[vid] = Vertex(id=vid, kind=kind, name=vdoc.get("name", ""), params=params)
        if "input" in vdoc:
            binding[vid] = int(vdoc["input"])

    edges = [(int(s), int(d)) for s, d in doc.get("edges", [])]
    input_shapes = [tuple(int(d) for d in s) for s in doc.get("input_shapes", [])]
    for shape in input_shapes:
        _check_shape(shape)

    g = ComputationGraph(vertices=vertices, edges=edges, input_shapes=input_shapes,
                         input_binding=binding)
    _validate_arity(g)
    return g


def _check_shape(shape: tuple[int, ...]) -> None:
    if len(shape) not in (2, 4) or any(d < 1 for d in shape):
        raise GraphError(f"shape {shape} must be rank 2 or 4 with positive dims")


def _validate_arity(g: ComputationGraph) -> None:
    n_out = sum(isinstance(v.kind, GraphOutput) for v in g.vertices.values())
    if n_out > 1:
        raise GraphError("at most one output vertex is supported")
    for vid, idx in g.input_binding.items():
        if vid not in g.input_ids:
            raise GraphError(f"vertex {vid} has an input binding but incoming edges")
        if not 0 <= idx < len(g.input_shapes):
            raise GraphError(f"vertex {vid} bound to missing input {idx}")
    used = {g.input_binding[v] for v in g.input_ids}
    if g.input_ids and used != set(range(len(g.input_shapes))):
        raise GraphError("every input shape must feed at least one root vertex")
    for vid, vx in g.vertices.items():
        n_in = len(g.preds[vid])
        cat = vx.category
        if cat in (SD_JOINT, SID_JOINT):
            if n_in < 2:
                raise GraphError(f"joint vertex {vid} needs >= 2 inputs, has {n_in}")
        elif cat == OUTPUT:
            if n_in != 1:
                raise GraphError(f"output vertex {vid} needs exactly 1 input, has {n_in}")
            if g.succs[vid]:
                raise GraphError(f"output vertex {vid} must be terminal")
        elif n_in > 1:
            raise GraphError(f"vertex {vid} ({vx.kind.op}) accepts a single input")


# ---------------------------------------------------------------------------
# Shape inference
# ---------------------------------------------------------------------------

def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise GraphError(f"spatial size {size} too small for kernel {kernel}")
    return out


def _infer_vertex_shape(vx: Vertex, in_shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
    kind = vx.kind
    if isinstance(kind, Conv2d):
        (n, c, h, w), = in_shapes
        if c != kind.in_channels:
            raise GraphError(
                f"vertex {vx.id}: conv expects {kind.in_channels} channels, got {c}"
            )
        return (n, kind.out_channels,
                _conv_out(h, kind.kernel, kind.stride, kind.padding),
                _conv_out(w, kind.kernel, kind.stride, kind.padding))
    if isinstance(kind, Linear):
        (n, f), = in_shapes
        if f != kind.in_features:
            raise GraphError(
                f"vertex {vx.id}: linear expects {kind.in_features} features, got {f}"
            )
        return (n, kind.out_features)
    if isinstance(kind, BatchNorm):
        shape, = in_shapes
        if shape[1] != kind.channels:
            raise GraphError(
                f"vertex {vx.id}: batch_norm expects {kind.channels} channels, got {shape[1]}"
            )
        return shape
    if isinstance(kind, ReLU):
        return in_shapes[0]
    if isinstance(kind, (MaxPool, AvgPool)):
        (n, c, h, w), = in_shapes
        ho = (h - kind.kernel) // kind.stride + 1
        wo = (w - kind.kernel) // kind.stride + 1
        if ho < 1 or wo < 1:
            raise GraphError(f"vertex {vx.id}: pool kernel larger than input")
        return (n, c, ho, wo)
    if isinstance(kind, Flatten):
        shape, = in_shapes
        if len(shape) != 4:
            raise FlattenWithoutKnownSpatialDims(
                f"vertex {vx.id}: flatten needs a rank-4 input, got {shape}"
            )
        n, c, h, w = shape
        return (n, c * h * w)
    if isinstance(kind, (Add, Mul)):
        first = in_shapes[0]
        for s in in_shapes[1:]:
            if s != first:
                raise ShapeMismatchAtSDJoint(
                    f"vertex {vx.id}: {kind.op} inputs {first} vs {s}"
                )
        return first
    if isinstance(kind, Concat):
        first = in_shapes[0]
        for s in in_shapes[1:]:
            if len(s) != len(first) or s[0] != first[0] or s[2:] != first[2:]:
                raise GraphError(
                    f"vertex {vx.id}: concat inputs differ outside the channel axis"
                )
        channels = sum(s[1] for s in in_shapes)
        return (first[0], channels, *first[2:])
    if isinstance(kind, Unknown):
        # opaque op: assume shape-preserving single input
        return in_shapes[0]
    if isinstance(kind, GraphOutput):
        return in_shapes[0]
    raise GraphError(f"cannot infer shape for op {kind.op!r}")


def infer_shapes(g: ComputationGraph) -> ComputationGraph:
    """Fill every vertex's out_shape; idempotent.

    Raises ShapeMismatchAtSDJoint when an Add/Mul receives unequal input
    shapes and FlattenWithoutKnownSpatialDims for a Flatten on 2-D input.
    """
    batch_dims = {s[0] for s in g.input_shapes}
    if len(batch_dims) > 1:
        raise GraphError("all graph inputs must share the batch dimension")
    for vid in g.topo_order:
        vx = g.vertices[vid]
        if vid in g.input_binding:
            in_shapes = [g.input_shapes[g.input_binding[vid]]]
            if vx.category in (SD_JOINT, SID_JOINT):
                raise GraphError(f"joint vertex {vid} cannot be a graph input")
        else:
            order = (g.joint_input_order(vid)
                     if vx.category in (SD_JOINT, SID_JOINT) else g.preds[vid])
            in_shapes = [g.vertices[p].out_shape for p in order]
            if any(s is None for s in in_shapes):
                raise GraphError(f"vertex {vid} has an unshaped predecessor")
        vx.out_shape = _infer_vertex_shape(vx, in_shapes)
    return g


# ---------------------------------------------------------------------------
# FLOPs / parameter accounting
# ---------------------------------------------------------------------------

def count_flops_params(g: ComputationGraph) -> tuple[int, int]:
    """Per-sample FLOPs and trainable parameter count.

    Conventions: multiply-add = 2 FLOPs; Conv = 2*k^2*Cin*Cout*Hout*Wout,
    Linear = 2*Fin*Fout, bias one FLOP per output element, BatchNorm 2 per
    element, ReLU 1, pooling k^2 per output element, Add/Mul (n_inputs - 1)
    per element, Concat/Flatten/Unknown/output free.
    """
    flops = 0
    params = 0
    for vid in g.topo_order:
        vx = g.vertices[vid]
        kind = vx.kind
        if vx.out_shape is None:
            raise GraphError("count_flops_params requires inferred shapes")
        numel = int(np.prod(vx.out_shape[1:]))
        if isinstance(kind, Conv2d):
            _, _, ho, wo = vx.out_shape
            flops += 2 * kind.kernel ** 2 * kind.in_channels * kind.out_channels * ho * wo
            if kind.has_bias:
                flops += numel
        elif isinstance(kind, Linear):
            flops += 2 * kind.in_features * kind.out_features
            if kind.has_bias:
                flops += kind.out_features
        elif isinstance(kind, BatchNorm):
            flops += 2 * numel
        elif isinstance(kind, ReLU):
            flops += numel
        elif isinstance(kind, (MaxPool, AvgPool)):
            flops += kind.kernel ** 2 * numel
        elif isinstance(kind, (Add, Mul)):
            flops += (len(g.preds[vid]) - 1) * numel
        if vx.params is not None:
            params += vx.params.trainable_count()
    return flops, params


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def graph_to_doc(g: ComputationGraph, include_params: bool = True) -> dict:
    vdocs = []
    for vid in sorted(g.vertices):
        vx = g.vertices[vid]
        vdoc: dict = {"id": vid, "op": vx.kind.op}
        if vx.name:
            vdoc["name"] = vx.name
        if g.input_binding.get(vid, 0) != 0:
            vdoc["input"] = g.input_binding[vid]
        for a in _KIND_ATTRS.get(vx.kind.op, ()):
            vdoc[a] = getattr(vx.kind, a)
        if include_params and vx.params is not None:
            pdoc = {}
            for f in fields(vx.params):
                arr = getattr(vx.params, f.name)
                if arr is not None:
                    pdoc[f.name] = arr.tolist()
            vdoc["params"] = pdoc
        vdocs.append(vdoc)
    return {
        "input_shapes": [list(s) for s in g.input_shapes],
        "vertices": vdocs,
        "edges": [list(e) for e in g.edges],
    }


def save_graph(g: ComputationGraph, path, include_params: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_doc(g, include_params=include_params), fh)


def load_graph(path) -> ComputationGraph:
    with open(path, encoding="utf-8") as fh:
        return build_graph(json.load(fh))


def graphs_structurally_equal(a: ComputationGraph, b: ComputationGraph,
                              check_params: bool = True) -> bool:
    if sorted(a.vertices) != sorted(b.vertices):
        return False
    if a.edges != b.edges or a.input_shapes != b.input_shapes:
        return False
    if a.input_binding != b.input_binding:
        return False
    for vid, va in a.vertices.items():
        vb = b.vertices[vid]
        if va.kind != vb.kind:
            return False
        if check_params:
            pa, pb = va.params, vb.params
            if (pa is None) != (pb is None):
                return False
            if pa is not None:
                for f in fields(pa):
                    xa, xb = getattr(pa, f.name), getattr(pb, f.name)
                    if (xa is None) != (xb is None):
                        return False
                    if xa is not None and not np.array_equal(xa, xb):
                        return False
    return True


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------

def init_params(g: ComputationGraph, rng: np.random.Generator) -> ComputationGraph:
    """He-style init: weight rows ~ N(0, 2/fan_in), biases zero, BN identity.

    Draws in ascending vertex-id order so a fixed seed yields fixed weights.
    """
    for vid in sorted(g.vertices):
        vx = g.vertices[vid]
        if vx.params is None or vx.params.weight is None:
            continue
        fan_in = vx.params.weight.shape[1]
        vx.params.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), vx.params.weight.shape)
        if vx.params.bias is not None:
            vx.params.bias = np.zeros_like(vx.params.bias)
    return g


# ---------------------------------------------------------------------------
# DOT export
# ---------------------------------------------------------------------------

_DOT_PALETTE = (
    "#a6cee3", "#b2df8a", "#fb9a99", "#fdbf6f", "#cab2d6", "#ffff99",
    "#1f78b4", "#33a02c", "#e31a1c", "#ff7f00", "#6a3d9a", "#b15928",
)


def _dot_label(vx: Vertex) -> str:
    kind = vx.kind
    bits = [vx.name or f"v{vx.id}", kind.op]
    if isinstance(kind, Conv2d):
        bits.append(f"{kind.in_channels}->{kind.out_channels} k{kind.kernel}")
    elif isinstance(kind, Linear):
        bits.append(f"{kind.in_features}->{kind.out_features}")
    elif isinstance(kind, BatchNorm):
        bits.append(f"C={kind.channels}")
    elif isinstance(kind, Unknown):
        bits.append(kind.opname)
    return "\\n".join(bits)


def export_dot(g: ComputationGraph, coloring: Optional[dict[int, int]] = None) -> str:
    """Render the graph as DOT; vertices sharing a coloring label share a fillcolor."""
    lines = ["digraph G {", "  node [shape=box, style=filled, fillcolor=white];"]
    coloring = coloring or {}
    for vid in sorted(g.vertices):
        attrs = [f'label="{_dot_label(g.vertices[vid])}"']
        if vid in coloring:
            color = _DOT_PALETTE[coloring[vid] % len(_DOT_PALETTE)]
            attrs.append(f'fillcolor="{color}"')
        lines.append(f"  n{vid} [{', '.join(attrs)}];")
    for src, dst in g.edges:
        lines.append(f"  n{src} -> n{dst};")
    lines.append("}")
    return "\n".join(lines)
