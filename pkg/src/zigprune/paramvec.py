"""Flat-vector view over a graph's trainable parameters.

The optimizer works on one contiguous double vector; this maps between that
vector, the per-vertex parameter tensors, and group slices.
"""

from __future__ import annotations

import numpy as np

from .graph import ComputationGraph
from .partition import ParamSlice, ZeroInvariantGroup


class ParamIndex:
    def __init__(self, g: ComputationGraph):
        self._layout: dict[tuple[int, str], tuple[int, tuple[int, ...]]] = {}
        offset = 0
        for vid in sorted(g.vertices):
            params = g.vertices[vid].params
            if params is None:
                continue
            for role, arr in params.trainable_items():
                self._layout[(vid, role)] = (offset, arr.shape)
                offset += arr.size
        self.size = offset

    def gather(self, g: ComputationGraph) -> np.ndarray:
        vec = np.empty(self.size)
        for (vid, role), (off, shape) in self._layout.items():
            arr = getattr(g.vertices[vid].params, role)
            vec[off:off + arr.size] = arr.ravel()
        return vec

    def scatter(self, g: ComputationGraph, vec: np.ndarray) -> None:
        for (vid, role), (off, shape) in self._layout.items():
            size = int(np.prod(shape))
            setattr(g.vertices[vid].params, role,
                    vec[off:off + size].reshape(shape).copy())

    def gather_grads(self, grads: dict[int, dict[str, np.ndarray]]) -> np.ndarray:
        vec = np.zeros(self.size)
        for (vid, role), (off, shape) in self._layout.items():
            arr = grads.get(vid, {}).get(role)
            if arr is not None:
                vec[off:off + arr.size] = arr.ravel()
        return vec

    def slice_indices(self, s: ParamSlice) -> np.ndarray:
        """Flat indices covered by one parameter slice."""
        role = "weight" if s.role == "weight_row" else s.role
        off, shape = self._layout[(s.vertex_id, role)]
        if s.role == "weight_row":
            cols = shape[1]
            return np.arange(off + s.start * cols, off + s.stop * cols)
        return np.arange(off + s.start, off + s.stop)

    def group_indices(self, group: ZeroInvariantGroup) -> np.ndarray:
        parts = [self.slice_indices(s) for s in group.slices]
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.intp)
