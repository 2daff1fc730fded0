"""Forward/reverse execution engine for the graph IR.

Double precision throughout. ``forward`` evaluates the graph on a batch and
returns an activation cache; ``backward`` turns a loss into per-vertex
parameter gradients averaged over the batch. Training mode uses batch
statistics in BatchNorm (and updates running statistics in place, momentum
0.1); eval mode is a pure function of (params, input).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, ShapeMismatch
from .graph import (
    Add,
    AvgPool,
    BatchNorm,
    ComputationGraph,
    Concat,
    Conv2d,
    Flatten,
    GraphOutput,
    Linear,
    MaxPool,
    Mul,
    ReLU,
    SD_JOINT,
    SID_JOINT,
    Unknown,
)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# GradientStore: vertex id -> role -> array, mirroring ParameterSet layouts.
GradientStore = dict[int, dict[str, np.ndarray]]


def _as_batch_list(g: ComputationGraph, inputs) -> list[np.ndarray]:
    if isinstance(inputs, np.ndarray):
        inputs = [inputs]
    if len(inputs) != len(g.input_shapes):
        raise ShapeMismatch(
            f"graph takes {len(g.input_shapes)} inputs, got {len(inputs)}"
        )
    arrays = []
    batch = None
    for arr, shape in zip(inputs, g.input_shapes):
        arr = np.asarray(arr, dtype=float)
        if arr.shape[1:] != shape[1:]:
            raise ShapeMismatch(f"input shape {arr.shape} incompatible with {shape}")
        if batch is None:
            batch = arr.shape[0]
        elif arr.shape[0] != batch:
            raise ShapeMismatch("graph inputs disagree on batch size")
        arrays.append(arr)
    return arrays


# ---------------------------------------------------------------------------
# convolution plumbing
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    """Patches as one (N*Ho*Wo, C*k*k) matrix so the conv is a single GEMM."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n * ho * wo, c * k * k), ho, wo


def _col2im(dcols: np.ndarray, x_shape, k: int, stride: int, pad: int, ho: int, wo: int):
    """Scatter-add (N*Ho*Wo, C*k*k) patch gradients back onto the input."""
    n, c, h, w = x_shape
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    d = np.ascontiguousarray(
        dcols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d[:, :, i, j]
    if pad:
        return dxp[:, :, pad:pad + h, pad:pad + w]
    return dxp


def _pool_windows(x: np.ndarray, k: int, stride: int):
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return win  # (n, c, ho, wo, k, k)


def _pool_scatter(dwin: np.ndarray, x_shape, k: int, stride: int, ho: int, wo: int):
    """Scatter-add per-window gradients (n, c, ho, wo, k, k) onto the input."""
    dx = np.zeros(x_shape)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dwin[:, :, :, :, i, j]
    return dx


# ---------------------------------------------------------------------------
# per-vertex forward
# ---------------------------------------------------------------------------

def _forward_vertex(vx, xs: list[np.ndarray], mode: str):
    kind = vx.kind
    if isinstance(kind, Conv2d):
        x, = xs
        cols, ho, wo = _im2col(x, kind.kernel, kind.stride, kind.padding)
        out = cols @ vx.params.weight.T
        if vx.params.bias is not None:
            out += vx.params.bias
        out = np.ascontiguousarray(
            out.reshape(x.shape[0], ho, wo, kind.out_channels).transpose(0, 3, 1, 2))
        return out, {"cols": cols, "x_shape": x.shape, "ho": ho, "wo": wo}
    if isinstance(kind, Linear):
        x, = xs
        out = x @ vx.params.weight.T
        if vx.params.bias is not None:
            out = out + vx.params.bias
        return out, {"x": x}
    if isinstance(kind, BatchNorm):
        x, = xs
        p = vx.params
        axes = (0, 2, 3) if x.ndim == 4 else (0,)
        expand = (lambda a: a[None, :, None, None]) if x.ndim == 4 else (lambda a: a[None, :])
        if mode == "train":
            mean = x.mean(axis=axes)
            var = (x * x).mean(axis=axes) - mean * mean
            np.maximum(var, 0.0, out=var)
            p.running_mean *= 1.0 - BN_MOMENTUM
            p.running_mean += BN_MOMENTUM * mean
            p.running_var *= 1.0 - BN_MOMENTUM
            p.running_var += BN_MOMENTUM * var
        else:
            mean, var = p.running_mean, p.running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - expand(mean)) * expand(inv_std)
        out = expand(p.gamma) * xhat + expand(p.beta)
        return out, {"xhat": xhat, "inv_std": inv_std, "axes": axes,
                     "expand": expand, "mode": mode}
    if isinstance(kind, ReLU):
        x, = xs
        mask = x > 0
        return x * mask, {"mask": mask}
    if isinstance(kind, MaxPool):
        x, = xs
        win = _pool_windows(x, kind.kernel, kind.stride)
        n, c, ho, wo = win.shape[:4]
        flat = win.reshape(n, c, ho, wo, -1)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return out, {"arg": arg, "x_shape": x.shape, "ho": ho, "wo": wo}
    if isinstance(kind, AvgPool):
        x, = xs
        win = _pool_windows(x, kind.kernel, kind.stride)
        out = win.mean(axis=(-2, -1))
        return out, {"x_shape": x.shape, "ho": out.shape[2], "wo": out.shape[3]}
    if isinstance(kind, Flatten):
        x, = xs
        return x.reshape(x.shape[0], -1), {"x_shape": x.shape}
    if isinstance(kind, Add):
        out = xs[0].copy()
        for x in xs[1:]:
            out += x
        return out, {"n": len(xs)}
    if isinstance(kind, Mul):
        out = xs[0].copy()
        for x in xs[1:]:
            out *= x
        return out, {"xs": xs}
    if isinstance(kind, Concat):
        widths = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1), {"widths": widths}
    if isinstance(kind, GraphOutput):
        return xs[0], {}
    if isinstance(kind, Unknown):
        raise GraphError(f"cannot execute unknown op {kind.opname!r}")
    raise GraphError(f"no forward rule for {kind.op!r}")


def _backward_vertex(vx, vcache, dout: np.ndarray, grads_out: dict):
    """Returns gradients w.r.t. the vertex inputs (in input order)."""
    kind = vx.kind
    if isinstance(kind, Conv2d):
        n = dout.shape[0]
        dflat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(
            -1, kind.out_channels)
        grads_out["weight"] += dflat.T @ vcache["cols"]
        if vx.params.bias is not None:
            grads_out["bias"] += dflat.sum(axis=0)
        dcols = dflat @ vx.params.weight
        dx = _col2im(dcols, vcache["x_shape"], kind.kernel, kind.stride,
                     kind.padding, vcache["ho"], vcache["wo"])
        return [dx]
    if isinstance(kind, Linear):
        grads_out["weight"] += dout.T @ vcache["x"]
        if vx.params.bias is not None:
            grads_out["bias"] += dout.sum(axis=0)
        return [dout @ vx.params.weight]
    if isinstance(kind, BatchNorm):
        xhat, inv_std = vcache["xhat"], vcache["inv_std"]
        axes, expand = vcache["axes"], vcache["expand"]
        grads_out["gamma"] += (dout * xhat).sum(axis=axes)
        grads_out["beta"] += dout.sum(axis=axes)
        dxhat = dout * expand(vx.params.gamma)
        if vcache["mode"] == "train":
            m = np.prod([dout.shape[a] for a in axes])
            dx = (expand(inv_std) / m) * (
                m * dxhat
                - expand(dxhat.sum(axis=axes))
                - xhat * expand((dxhat * xhat).sum(axis=axes))
            )
        else:
            dx = dxhat * expand(inv_std)
        return [dx]
    if isinstance(kind, ReLU):
        return [dout * vcache["mask"]]
    if isinstance(kind, MaxPool):
        n, c, ho, wo = dout.shape
        kk = kind.kernel * kind.kernel
        onehot = np.zeros((n, c, ho, wo, kk))
        np.put_along_axis(onehot, vcache["arg"][..., None], 1.0, axis=-1)
        dwin = (onehot * dout[..., None]).reshape(n, c, ho, wo, kind.kernel, kind.kernel)
        return [_pool_scatter(dwin, vcache["x_shape"], kind.kernel, kind.stride, ho, wo)]
    if isinstance(kind, AvgPool):
        n, c, ho, wo = dout.shape
        kk = kind.kernel * kind.kernel
        dwin = np.broadcast_to((dout / kk)[..., None, None],
                               (n, c, ho, wo, kind.kernel, kind.kernel))
        return [_pool_scatter(dwin, vcache["x_shape"], kind.kernel, kind.stride, ho, wo)]
    if isinstance(kind, Flatten):
        return [dout.reshape(vcache["x_shape"])]
    if isinstance(kind, Add):
        return [dout] * vcache["n"]
    if isinstance(kind, Mul):
        xs = vcache["xs"]
        dins = []
        for i in range(len(xs)):
            d = dout.copy()
            for j, x in enumerate(xs):
                if j != i:
                    d *= x
            dins.append(d)
        return dins
    if isinstance(kind, Concat):
        splits = np.cumsum(vcache["widths"])[:-1]
        return list(np.split(dout, splits, axis=1))
    if isinstance(kind, GraphOutput):
        return [dout]
    raise GraphError(f"no backward rule for {kind.op!r}")


# ---------------------------------------------------------------------------
# graph-level passes
# ---------------------------------------------------------------------------

def forward(g: ComputationGraph, inputs, mode: str = "train"):
    """Evaluate the graph; returns (output array, cache for backward)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    xs = _as_batch_list(g, inputs)
    acts: dict[int, np.ndarray] = {}
    vcaches: dict[int, dict] = {}
    for vid in g.topo_order:
        vx = g.vertices[vid]
        if vid in g.input_binding:
            vin = [xs[g.input_binding[vid]]]
        else:
            order = (g.joint_input_order(vid)
                     if vx.category in (SD_JOINT, SID_JOINT) else g.preds[vid])
            vin = [acts[p] for p in order]
        acts[vid], vcaches[vid] = _forward_vertex(vx, vin, mode)
    out_id = g.output_id if g.output_id is not None else g.topo_order[-1]
    cache = {"acts": acts, "vcaches": vcaches, "mode": mode, "out_id": out_id}
    return acts[out_id], cache


def _loss_and_grad(out: np.ndarray, loss: str, targets: np.ndarray):
    n = out.shape[0]
    if loss == "cross_entropy":
        targets = np.asarray(targets, dtype=int)
        z = out - out.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        value = -logp[np.arange(n), targets].mean()
        dout = np.exp(logp)
        dout[np.arange(n), targets] -= 1.0
        return value, dout / n
    if loss == "mse":
        targets = np.asarray(targets, dtype=float)
        r = out - targets
        return 0.5 * (r * r).sum() / n, r / n
    raise ValueError(f"unsupported loss {loss!r}")


def evaluate_loss(out: np.ndarray, loss: str, targets) -> float:
    return _loss_and_grad(out, loss, targets)[0]


def zero_gradients(g: ComputationGraph) -> GradientStore:
    grads: GradientStore = {}
    for vid, vx in g.vertices.items():
        if vx.params is not None:
            grads[vid] = {role: np.zeros_like(arr)
                          for role, arr in vx.params.trainable_items()}
    return grads


def backward(g: ComputationGraph, cache, loss: str, targets):
    """Compute (loss value, parameter gradients) from a train-mode cache."""
    out = cache["acts"][cache["out_id"]]
    value, dout = _loss_and_grad(out, loss, targets)
    grads = zero_gradients(g)
    dacts: dict[int, np.ndarray] = {cache["out_id"]: dout}
    for vid in reversed(g.topo_order):
        if vid not in dacts:
            continue  # dead-end vertex: no path to the loss
        vx = g.vertices[vid]
        dins = _backward_vertex(vx, cache["vcaches"][vid], dacts.pop(vid),
                                grads.get(vid, {}))
        if vid in g.input_binding:
            continue
        order = (g.joint_input_order(vid)
                 if vx.category in (SD_JOINT, SID_JOINT) else g.preds[vid])
        for p, d in zip(order, dins):
            if p in dacts:
                dacts[p] = dacts[p] + d
            else:
                dacts[p] = d
    return value, grads


def accuracy(out: np.ndarray, targets) -> float:
    return float((out.argmax(axis=1) == np.asarray(targets)).mean())
