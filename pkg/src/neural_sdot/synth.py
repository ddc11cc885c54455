"""Synthetic Gaussian-mixture measures and mode-collapse metrics.

``ring`` has eight modes on the unit circle with per-coordinate standard
deviation 0.01; ``grid`` has 25 modes at ``(-4 + 2i, -4 + 2j)`` with standard
deviation 0.05.  :func:`evaluate_modes` reports how many modes a set of
generated points captures, the share of high-quality points (within three
standard deviations of the nearest mode) and the KL divergence of the
induced mode histogram from the uniform one.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import SourceSpec
from .errors import InvalidInputError
from .volume import stream

__all__ = [
    "ModeSpec",
    "MetricReport",
    "ring",
    "grid",
    "named_spec",
    "sample_mixture",
    "evaluate_modes",
    "da_config",
    "make_da_dataset",
    "read_labeled_csv",
    "write_labeled_csv",
]


@dataclass(frozen=True)
class ModeSpec:
    name: str
    means: np.ndarray
    sigma: float
    # Source box used when these modes are the target atoms of a benchmark.
    source_low: tuple
    source_high: tuple

    @property
    def count(self) -> int:
        return self.means.shape[0]

    def source(self) -> SourceSpec:
        return SourceSpec.uniform_box(self.source_low, self.source_high)


def ring() -> ModeSpec:
    t = 2 * np.pi * np.arange(1, 9) / 8
    return ModeSpec("ring", np.c_[np.cos(t), np.sin(t)], 1e-2, (-1.5, -1.5), (1.5, 1.5))


def grid() -> ModeSpec:
    i, j = np.meshgrid(np.arange(5), np.arange(5), indexing="ij")
    means = np.c_[-4.0 + 2 * i.ravel(), -4.0 + 2 * j.ravel()]
    return ModeSpec("grid", means, 0.05, (-5.0, -5.0), (5.0, 5.0))


def named_spec(name: str) -> ModeSpec:
    try:
        return {"ring": ring, "grid": grid}[name]()
    except KeyError:
        raise InvalidInputError(f"unknown dataset {name!r}; expected 'ring' or 'grid'") from None


def sample_mixture(mix: ModeSpec, count: int, seed: int = 0):
    """``count`` points from the equal-weight mixture, with their mode labels."""
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    rng = stream(seed)
    labels = rng.integers(0, mix.count, size=count)
    pts = mix.means[labels] + mix.sigma * rng.standard_normal((count, mix.means.shape[1]))
    return pts, labels


@dataclass(frozen=True)
class MetricReport:
    modes_captured: int
    high_quality_fraction: float
    reverse_kl: float
    total_modes: int
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "modes_captured": self.modes_captured,
            "total_modes": self.total_modes,
            "high_quality_fraction": self.high_quality_fraction,
            "reverse_kl": self.reverse_kl,
            "sample_count": self.sample_count,
        }


def evaluate_modes(generated, mix: ModeSpec, n_std: float = 3.0) -> MetricReport:
    X = np.asarray(generated, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("generated points must be a nonempty (m, 2) array")
    d2 = ((X[:, None, :] - mix.means[None, :, :]) ** 2).sum(axis=-1)
    nearest = np.argmin(d2, axis=1)
    dist = np.sqrt(d2[np.arange(X.shape[0]), nearest])
    good = dist <= n_std * mix.sigma
    captured = np.unique(nearest[good]).size
    p = np.bincount(nearest, minlength=mix.count) / X.shape[0]
    q = 1.0 / mix.count
    nz = p > 0
    kl = float(np.sum(p[nz] * np.log(p[nz] / q)))
    return MetricReport(int(captured), float(good.mean()), max(kl, 0.0), mix.count, X.shape[0])


def da_config(version: int = 1) -> dict:
    text = resources.files("neural_sdot.data").joinpath(f"da_mixture_v{version}.json").read_text()
    return json.loads(text)


def make_da_dataset(count: int = 4000, classes: int = 3, seed: int = 0, *, rotation: float | None = None,
                    shift=None, scale: float | None = None, config: dict | None = None):
    """Labelled source and target point sets for domain adaptation.

    Each class is a two-component Gaussian mixture; components sit on either
    side of a point on a circle.  The target domain is the same mixture
    rotated about the origin, scaled and shifted.  Labels cycle through the
    classes so every class gets ``count // classes`` or one more points.
    Returns ``((xs, ys), (xt, yt))``.
    """
    if count < 1 or classes < 1:
        raise InvalidInputError("count and classes must be >= 1")
    cfg = dict(da_config() if config is None else config)
    rot = cfg["target_rotation"] if rotation is None else rotation
    shift = np.asarray(cfg["target_shift"] if shift is None else shift, dtype=np.float64)
    scale = cfg["target_scale"] if scale is None else scale
    ang = 2 * np.pi * np.arange(classes) / classes
    base = cfg["class_radius"] * np.c_[np.cos(ang), np.sin(ang)]
    perp = cfg["component_offset"] * np.c_[-np.sin(ang), np.cos(ang)]
    c, s = np.cos(rot), np.sin(rot)
    R = np.array([[c, -s], [s, c]])

    def draw(rng):
        labels = np.arange(count) % classes
        sign = np.where(rng.integers(0, 2, size=count) == 0, 1.0, -1.0)
        mu = base[labels] + sign[:, None] * perp[labels]
        return mu + cfg["std"] * rng.standard_normal((count, 2)), labels

    xs, ys = draw(stream(seed, 0))
    xt, yt = draw(stream(seed, 1))
    xt = scale * xt @ R.T + shift
    return (xs, ys), (xt, yt)


def write_labeled_csv(path, points, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "label"])
        for p, l in zip(np.asarray(points, dtype=np.float64).tolist(), np.asarray(labels).tolist()):
            w.writerow([repr(p[0]), repr(p[1]), int(l)])


def read_labeled_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] and rows[0][0].strip().lower() == "x":
        rows = rows[1:]
    rows = [r for r in rows if r]
    pts = np.array([[float(r[0]), float(r[1])] for r in rows], dtype=np.float64).reshape(-1, 2)
    labels = np.array([int(r[2]) for r in rows], dtype=np.int64)
    return pts, labels
