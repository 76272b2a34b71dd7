"""Row-wise projection onto a MARS-norm ball around anchor weights.

The projection shrinks each row of a weight update back toward its anchor row
so that the L1 displacement of every row stays within the constraint radius.
Because the MARS matrix norm is the maximum absolute row sum, bounding each
row independently bounds the whole matrix. Rows already inside the ball are
returned bit-identically unchanged (the shrink factor is clamped at 1).

``canonicalize`` decides what counts as "a row" for tensors that are not
plain weight matrices: vectors (biases) become a single row, 4-axis
convolution kernels flatten to (out_channels, rest).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UnsupportedShapeError

__all__ = ["EPS_DIV", "ProjectionView", "canonicalize", "project_rows"]

# Floor on row L1 displacement to avoid 0/0 when weights sit exactly on the
# anchor (the constraint starts at 1e-8 with identical weights).
EPS_DIV = 1e-12


@dataclass(frozen=True)
class ProjectionView:
    """Mapping of a named tensor onto its canonical 2-D projection shape."""

    name: str
    source_shape: tuple[int, ...]
    rows: int
    cols: int
    rule: str

    def to_2d(self, tensor: np.ndarray) -> np.ndarray:
        if tuple(tensor.shape) != self.source_shape:
            raise DomainError(
                f"{self.name}: expected shape {self.source_shape}, got {tensor.shape}"
            )
        return np.ascontiguousarray(tensor, dtype=np.float64).reshape(self.rows, self.cols)

    def from_2d(self, mat: np.ndarray) -> np.ndarray:
        return np.asarray(mat, dtype=np.float64).reshape(self.source_shape)


def canonicalize(tensor, kind: str = "auto", name: str = "") -> ProjectionView:
    """Build the canonical 2-D view for a tensor.

    Rules: matrices stay as-is, a length-n vector becomes one 1 x n row, and
    rank-3/4 tensors (convolution kernels) keep the leading axis as rows and
    flatten the rest. Higher ranks are unsupported.

    ``kind`` is informational ("weight", "bias", "conv_kernel" or "auto") and
    is recorded in the view's rule when given.
    """
    arr = np.asarray(tensor, dtype=np.float64)
    if arr.size == 0:
        raise DomainError(f"{name or 'tensor'}: empty tensor has no projection view")
    shape = tuple(arr.shape)
    if arr.ndim == 2:
        rows, cols, rule = shape[0], shape[1], "matrix"
    elif arr.ndim == 1:
        rows, cols, rule = 1, shape[0], "vector-row"
    elif arr.ndim in (3, 4):
        rows, cols, rule = shape[0], int(np.prod(shape[1:])), "flatten-trailing"
    else:
        raise UnsupportedShapeError(
            f"{name or 'tensor'}: rank-{arr.ndim} tensors have no canonical row view"
        )
    if kind != "auto":
        rule = f"{rule}({kind})"
    return ProjectionView(name=name, source_shape=shape, rows=rows, cols=cols, rule=rule)


def project_rows(
    w_tilde, w_anchor, gamma: float, eps_div: float = EPS_DIV
) -> np.ndarray:
    """Project each row of ``w_tilde`` into the gamma L1-ball around the anchor row.

    Returns a new matrix whose rows satisfy ``|row - anchor_row|_1 <= gamma``
    (up to float rounding). Rows whose displacement is already within gamma
    are copied through untouched, so projecting twice is a no-op and an
    infinite gamma reproduces ``w_tilde`` exactly.
    """
    if not gamma >= 0:
        raise DomainError(f"projection radius must be nonnegative, got {gamma}")
    wt = np.asarray(w_tilde, dtype=np.float64)
    w0 = np.asarray(w_anchor, dtype=np.float64)
    if wt.shape != w0.shape:
        raise DomainError(f"shape mismatch: {wt.shape} vs {w0.shape}")
    if wt.ndim != 2:
        raise DomainError(f"project_rows expects canonical 2-D input, got rank {wt.ndim}")

    delta = wt - w0
    dist = np.abs(delta).sum(axis=1)
    factor = gamma / np.maximum(dist, eps_div)
    out = wt.copy()
    shrink = factor < 1.0
    if np.any(shrink):
        out[shrink] = w0[shrink] + factor[shrink, None] * delta[shrink]
    return out
