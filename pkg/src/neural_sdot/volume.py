"""Monte Carlo estimates of cell volumes and of the energy gradient.

Two schemes are provided.  The global scheme lets every source sample pick
its winner among all atoms.  The batched scheme splits the atoms into
consecutive batches, draws a fresh sample set per batch and lets samples
compete only inside that batch; counts are normalised by ``B * N`` for all
batches, including a short final one.

Random streams are derived from one root seed: the stream for
``(seed, *keys)`` is seeded with a splitmix64 chain over the keys, so batch
``k`` of iteration ``t`` gets the same samples whatever order batches run in.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import CellStats, DiscreteTarget, SourceSpec, _heights, assign_cells
from .errors import InvalidInputError

__all__ = [
    "VolumeConfig",
    "splitmix64",
    "stream",
    "estimate_volumes_global",
    "estimate_volumes_batched",
    "energy_gradient",
]

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``keys`` under root ``seed``."""
    s = splitmix64(seed & _MASK)
    for k in keys:
        s = splitmix64((s + k) & _MASK)
    return np.random.Generator(np.random.PCG64(s))


@dataclass(frozen=True)
class VolumeConfig:
    samples_per_batch: int = 65536
    atom_batches: int = 1
    atom_batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_batch < 1:
            raise InvalidInputError("samples_per_batch must be >= 1")
        if self.atom_batches < 1:
            raise InvalidInputError("atom_batches must be >= 1")
        if self.atom_batch_size is not None and self.atom_batch_size < 1:
            raise InvalidInputError("atom_batch_size must be >= 1")

    def batch_bounds(self, n: int) -> list[tuple[int, int]]:
        """Consecutive ``[start, stop)`` atom ranges, the last possibly short."""
        b = self.atom_batch_size or -(-n // self.atom_batches)
        if (self.atom_batches - 1) * b >= n or self.atom_batches * b < n:
            raise InvalidInputError(
                f"{self.atom_batches} batches of size {b} do not partition {n} atoms"
            )
        return [(k * b, min(n, (k + 1) * b)) for k in range(self.atom_batches)]


def estimate_volumes_global(source: SourceSpec, target, h, N: int, seed: int = 0, *,
                            iteration: int = 0, workers: int = 1) -> CellStats:
    """Fraction of ``N`` source samples falling in each cell."""
    if N < 1:
        raise InvalidInputError("N must be >= 1")
    Y = target.atoms if isinstance(target, DiscreteTarget) else np.asarray(target, dtype=np.float64)
    hv = _heights(h, Y.shape[0])
    _check_dim(source, Y)
    X = source.draw(N, stream(seed, iteration, 0))
    idx = assign_cells(X, Y, hv, workers=workers)
    counts = np.bincount(idx, minlength=Y.shape[0]).astype(np.int64)
    return CellStats(counts, X.shape[0])


def estimate_volumes_batched(source: SourceSpec, target, h, cfg: VolumeConfig, *,
                             iteration: int = 0, workers: int = 1) -> CellStats:
    """Batched competition: each atom batch gets its own ``N`` samples."""
    Y = target.atoms if isinstance(target, DiscreteTarget) else np.asarray(target, dtype=np.float64)
    hv = _heights(h, Y.shape[0])
    _check_dim(source, Y)
    bounds = cfg.batch_bounds(Y.shape[0])

    def run(k):
        lo, hi = bounds[k]
        X = source.draw(cfg.samples_per_batch, stream(cfg.seed, iteration, k))
        idx = assign_cells(X, Y[lo:hi], hv[lo:hi])
        return X.shape[0], np.bincount(idx, minlength=hi - lo)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(bounds))))
    else:
        parts = [run(k) for k in range(len(bounds))]
    counts = np.concatenate([c for _, c in parts]).astype(np.int64)
    total = len(bounds) * parts[0][0]
    return CellStats(counts, total)


def energy_gradient(stats: CellStats, target) -> tuple[np.ndarray, float]:
    """``w_hat - nu`` and its Euclidean norm."""
    nu = target.masses if isinstance(target, DiscreteTarget) else np.asarray(target, dtype=np.float64)
    if len(stats) != nu.shape[0]:
        raise InvalidInputError(f"{len(stats)} cell volumes for {nu.shape[0]} atoms")
    g = stats.volumes - nu
    return g, float(np.linalg.norm(g))


def _check_dim(source: SourceSpec, Y: np.ndarray) -> None:
    if source.dim != Y.shape[1]:
        raise InvalidInputError(f"source dimension {source.dim} != target dimension {Y.shape[1]}")
