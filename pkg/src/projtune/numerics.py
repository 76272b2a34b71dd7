"""Dense float64 linear algebra, row norms, and reproducible randomness.

Everything downstream (models, optimizers, the audit, the benchmark) works on
plain row-major ``float64`` numpy arrays. Vectors are treated as single-row
matrices where a 2-D view is needed. All randomness flows through
:class:`SeededRng`, a counter-based generator (Philox) so that a run is
reproducible byte-for-byte from its seed on any platform.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

__all__ = [
    "SeededRng",
    "as_matrix",
    "mars_norm",
    "row_l1_distances",
    "sample_normal",
]


def as_matrix(a) -> np.ndarray:
    """Coerce input to a 2-D float64 array; 1-D input becomes a single row.

    Raises DomainError for empty input or rank > 2.
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DomainError(f"expected a matrix or vector, got rank {arr.ndim}")
    if arr.size == 0:
        raise DomainError("empty matrix")
    return np.ascontiguousarray(arr)


def mars_norm(w) -> float:
    """Maximum absolute row sum of ``w``: the l_inf->l_inf operator norm."""
    m = as_matrix(w)
    return float(np.abs(m).sum(axis=1).max())


def row_l1_distances(a, b) -> np.ndarray:
    """Per-row L1 distance between two equally shaped matrices."""
    ma = as_matrix(a)
    mb = as_matrix(b)
    if ma.shape != mb.shape:
        raise DomainError(f"shape mismatch: {ma.shape} vs {mb.shape}")
    return np.abs(ma - mb).sum(axis=1)


class SeededRng:
    """Counter-based random generator owned by a single run.

    Built on numpy's Philox bit generator: the same ``(seed, stream)`` pair
    yields the same sample sequence on every platform. ``derive`` creates an
    independent child stream from integer tags, which is how the benchmark
    draws per-iteration batches without carrying mutable RNG state between
    checkpoints.
    """

    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        self._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=self.stream))
        )

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream={self.stream})"

    def derive(self, *tags: int) -> "SeededRng":
        """Independent child generator keyed by ``tags`` (order matters)."""
        return SeededRng(self.seed, self.stream + tuple(int(t) for t in tags))

    # -- sampling ---------------------------------------------------------

    def normal(self, shape, mean: float = 0.0, stddev: float = 1.0) -> np.ndarray:
        if stddev < 0:
            raise DomainError(f"negative stddev: {stddev}")
        return mean + stddev * self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(np.float64, copy=False)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    # -- state (for checkpointing) ---------------------------------------

    def get_state(self) -> dict:
        """Bit-generator state as a JSON-serializable dict."""

        def plain(o):
            if isinstance(o, dict):
                return {k: plain(v) for k, v in o.items()}
            if isinstance(o, np.ndarray):
                return o.tolist()
            if isinstance(o, np.integer):
                return int(o)
            return o

        return plain(self._gen.bit_generator.state)

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def sample_normal(
    rng: SeededRng, rows: int, cols: int, mean: float = 0.0, stddev: float = 1.0
) -> np.ndarray:
    """Deterministic (rows, cols) Gaussian sample from ``rng``."""
    if rows <= 0 or cols <= 0:
        raise DomainError(f"matrix dimensions must be positive, got {rows}x{cols}")
    return rng.normal((rows, cols), mean=mean, stddev=stddev)
