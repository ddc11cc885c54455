"""Geometry of the piecewise-linear Brenier potential.

The potential over a discrete target is the upper envelope of the planes
``x -> x . y_i + h_i``.  Its gradient at ``x`` is the atom whose plane wins,
which is the semi-discrete transport map.  Everything here works on
float64 arrays; atoms are stored as a C-contiguous ``(n, d)`` array.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "DiscreteTarget",
    "HeightVector",
    "SourceSpec",
    "CellStats",
    "eval_potential",
    "assign_cells",
    "transport_map",
    "project_zero_mean",
    "read_points_csv",
    "write_points_csv",
]

MASS_TOL = 1e-9

# Upper bound on the number of (point, atom) scores held in memory at once.
_SCORE_BUDGET = 1 << 22


@dataclass(frozen=True)
class DiscreteTarget:
    """Atoms ``y_i`` in R^d with positive masses summing to one."""

    atoms: np.ndarray
    masses: np.ndarray

    def __init__(self, atoms, masses=None, *, validate: bool = True):
        atoms = np.ascontiguousarray(atoms, dtype=np.float64)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] == 0 or atoms.shape[1] == 0:
            raise InvalidInputError(f"atoms must be a nonempty (n, d) array, got shape {atoms.shape}")
        n = atoms.shape[0]
        if masses is None:
            masses = np.full(n, 1.0 / n)
        masses = np.ascontiguousarray(masses, dtype=np.float64).reshape(-1)
        if masses.shape[0] != n:
            raise InvalidInputError(f"{n} atoms but {masses.shape[0]} masses")
        if validate:
            if not np.all(np.isfinite(atoms)):
                raise InvalidInputError("atoms must be finite")
            if np.any(masses <= 0):
                raise InvalidInputError("every mass must be > 0")
            if abs(masses.sum() - 1.0) > MASS_TOL:
                raise InvalidInputError(f"masses sum to {masses.sum()!r}, expected 1")
            if np.unique(atoms, axis=0).shape[0] != n:
                raise InvalidInputError("duplicate atoms are not allowed")
        atoms.flags.writeable = False
        masses.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "masses", masses)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, index) -> DiscreteTarget:
        """Restriction to ``index`` with masses renormalised."""
        index = np.asarray(index, dtype=np.int64)
        m = self.masses[index]
        return DiscreteTarget(self.atoms[index], m / m.sum())

    @classmethod
    def uniform(cls, atoms) -> DiscreteTarget:
        return cls(atoms)


@dataclass(frozen=True)
class HeightVector:
    """Per-atom heights; ``centered`` marks a zero-mean vector."""

    values: np.ndarray
    centered: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if self.centered and values.size and abs(values.mean()) > 1e-9 * max(1.0, np.abs(values).max()):
            raise InvalidInputError("centered height vector must have zero mean")

    def __len__(self) -> int:
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @classmethod
    def zeros(cls, n: int) -> HeightVector:
        return cls(np.zeros(n), centered=True)


@dataclass(frozen=True)
class SourceSpec:
    """A continuous (or empirical) source measure that can be sampled.

    ``kind`` is one of ``"uniform-box"``, ``"gaussian"`` or
    ``"explicit-samples"``.  Explicit samples are drawn i.i.d. from the
    empirical measure, except when the requested count reaches the sample
    count, in which case the whole sample set is returned in stored order.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in self.params.items()}
        if self.kind == "uniform-box":
            low, high = p["low"].reshape(-1), p["high"].reshape(-1)
            if low.shape != high.shape or low.size == 0:
                raise InvalidInputError("box bounds must have equal nonzero length")
            if np.any(low >= high):
                raise InvalidInputError("box bounds need low < high in every coordinate")
            p = {"low": low, "high": high}
        elif self.kind == "gaussian":
            mean, var = p["mean"].reshape(-1), p["var"].reshape(-1)
            if mean.shape != var.shape or mean.size == 0:
                raise InvalidInputError("mean and variance must have equal nonzero length")
            if np.any(var <= 0):
                raise InvalidInputError("gaussian variances must be > 0")
            p = {"mean": mean, "var": var}
        elif self.kind == "explicit-samples":
            s = p["samples"]
            if s.ndim == 1:
                s = s[:, None]
            if s.ndim != 2 or s.shape[0] == 0:
                raise InvalidInputError("explicit samples must be a nonempty (m, d) array")
            p = {"samples": s}
        else:
            raise InvalidInputError(f"unknown source kind {self.kind!r}")
        for v in p.values():
            v.flags.writeable = False
        object.__setattr__(self, "params", p)

    @classmethod
    def uniform_box(cls, low, high) -> SourceSpec:
        return cls("uniform-box", {"low": low, "high": high})

    @classmethod
    def gaussian(cls, mean, var) -> SourceSpec:
        return cls("gaussian", {"mean": mean, "var": var})

    @classmethod
    def explicit(cls, samples) -> SourceSpec:
        return cls("explicit-samples", {"samples": samples})

    @property
    def dim(self) -> int:
        if self.kind == "uniform-box":
            return self.params["low"].size
        if self.kind == "gaussian":
            return self.params["mean"].size
        return self.params["samples"].shape[1]

    def draw(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if count < 1:
            raise InvalidInputError("sample count must be >= 1")
        if self.kind == "uniform-box":
            low, high = self.params["low"], self.params["high"]
            return low + (high - low) * rng.random((count, low.size))
        if self.kind == "gaussian":
            mean, var = self.params["mean"], self.params["var"]
            return mean + np.sqrt(var) * rng.standard_normal((count, mean.size))
        samples = self.params["samples"]
        if count >= samples.shape[0]:
            return samples
        return samples[rng.integers(0, samples.shape[0], size=count)]

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: v.tolist() for k, v in self.params.items()}}


@dataclass(frozen=True)
class CellStats:
    """Monte Carlo cell volumes: ``volumes == counts / sample_count``."""

    counts: np.ndarray
    sample_count: int

    @property
    def volumes(self) -> np.ndarray:
        return self.counts / self.sample_count

    def __len__(self) -> int:
        return self.counts.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "count", "volume"])
        for i, (c, v) in enumerate(zip(self.counts.tolist(), self.volumes.tolist())):
            w.writerow([i, c, repr(v)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> CellStats:
        rows = list(csv.reader(io.StringIO(text)))[1:]
        counts = np.array([int(r[1]) for r in rows], dtype=np.int64)
        return cls(counts, int(counts.sum()))


def _atoms(target) -> np.ndarray:
    if isinstance(target, DiscreteTarget):
        return target.atoms
    a = np.ascontiguousarray(target, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def _heights(h, n: int) -> np.ndarray:
    v = h.values if isinstance(h, HeightVector) else np.asarray(h, dtype=np.float64).reshape(-1)
    if v.shape[0] != n:
        raise InvalidInputError(f"{v.shape[0]} heights for {n} atoms")
    return v


def _points(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, d) if X.size and d > 1 else X[:, None]
    if X.ndim != 2 or (X.shape[0] and X.shape[1] != d):
        raise InvalidInputError(f"points of dimension {X.shape[-1]} against atoms of dimension {d}")
    return X


def _scores(X: np.ndarray, Y: np.ndarray, h: np.ndarray) -> np.ndarray:
    # Per-coordinate accumulation: each score is computed the same way no
    # matter how many rows are in the block, so results do not depend on chunking.
    s = np.broadcast_to(h, (X.shape[0], h.shape[0])).copy()
    for k in range(Y.shape[1]):
        s += X[:, k, None] * Y[None, :, k]
    return s


def eval_potential(x, target, h) -> tuple[float, int]:
    """Value of ``max_i x . y_i + h_i`` and the smallest winning index."""
    Y = _atoms(target)
    hv = _heights(h, Y.shape[0])
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != Y.shape[1]:
        raise InvalidInputError(f"point of dimension {x.shape[0]} against atoms of dimension {Y.shape[1]}")
    s = _scores(x[None, :], Y, hv)[0]
    i = int(np.argmax(s))
    return float(s[i]), i


def assign_cells(X, target, h, *, chunk_size: int | None = None, workers: int = 1) -> np.ndarray:
    """Index of the winning plane for every row of ``X``.

    Ties go to the smallest index (``np.argmax`` semantics).  Rows are
    processed in independent chunks, optionally on a thread pool; the output
    is the same for every chunking.
    """
    Y = _atoms(target)
    hv = _heights(h, Y.shape[0])
    X = _points(X, Y.shape[1])
    m = X.shape[0]
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    if chunk_size is None:
        chunk_size = max(1, _SCORE_BUDGET // Y.shape[0])
    starts = range(0, m, chunk_size)

    def run(s):
        return np.argmax(_scores(X[s : s + chunk_size], Y, hv), axis=1)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return np.concatenate(parts).astype(np.int64, copy=False)


def transport_map(x, target, h) -> np.ndarray:
    """Gradient of the potential at ``x`` (a single point or a batch).

    Returns the winning atom for each point, so the result always equals
    ``atoms[assign_cells(x)]``.
    """
    Y = _atoms(target)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1 and x.size == Y.shape[1]
    idx = assign_cells(x.reshape(1, -1) if single else x, Y, h)
    out = Y[idx]
    return out[0] if single else out


def project_zero_mean(h) -> HeightVector:
    v = h.values if isinstance(h, HeightVector) else np.asarray(h, dtype=np.float64).reshape(-1)
    if v.size == 0:
        return HeightVector(v, centered=True)
    return HeightVector(v - v.mean(), centered=True)


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_points_csv(path, *, dim: int | None = None, with_mass: bool | None = None):
    """Read a point CSV.  Returns ``(points, masses_or_None)``.

    A header row is detected by a non-numeric first token.  The last column
    is taken as a mass column when the header names it ``mass`` or
    ``weight``, when ``with_mass`` is true, or when ``dim`` is given and the
    row has ``dim + 1`` columns.
    """
    text = Path(path).read_text() if not isinstance(path, io.StringIO) else path.getvalue()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    header = None
    if rows and not _is_number(rows[0][0].strip()):
        header, rows = [c.strip().lower() for c in rows[0]], rows[1:]
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric entry ({exc})") from None
    ncol = data.shape[1] if data.size else (len(header) if header else (dim or 0))
    if data.size == 0:
        data = data.reshape(0, ncol)
    if with_mass is None:
        if header is not None and header[-1] in ("mass", "weight"):
            with_mass = True
        elif dim is not None:
            with_mass = ncol == dim + 1
        else:
            with_mass = False
    if with_mass:
        pts, masses = data[:, :-1], data[:, -1]
    else:
        pts, masses = data, None
    if dim is not None and pts.shape[1] != dim:
        raise InvalidInputError(f"{path}: expected {dim} coordinates, found {pts.shape[1]}")
    return np.ascontiguousarray(pts), masses


def write_points_csv(path, points, masses=None, *, header: list[str] | None = None) -> None:
    points = np.asarray(points, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for i, p in enumerate(points.tolist()):
            row = [repr(float(c)) for c in p]
            if masses is not None:
                row.append(repr(float(masses[i])))
            w.writerow(row)
