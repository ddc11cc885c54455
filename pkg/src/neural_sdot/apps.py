"""End-to-end pipelines built on the height-net solver.

* :func:`mode_benchmark` trains on a fraction of mixture modes, predicts
  heights for the rest and scores the pushed-forward samples.
* :func:`color_transfer` recolours an image with a palette taken from
  another image.
* :func:`domain_adapt` and :func:`domain_adapt_partial` transfer labels
  from target atoms to source points through the transport map.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import DiscreteTarget, SourceSpec, assign_cells, transport_map
from .errors import InvalidInputError
from .solver import TrainConfig, TrainResult, predict_heights, train_height_net
from .synth import MetricReport, ModeSpec, evaluate_modes
from .volume import VolumeConfig, stream

__all__ = [
    "Image",
    "read_ppm",
    "write_ppm",
    "choose_subset",
    "mode_benchmark",
    "color_transfer",
    "domain_adapt",
    "domain_adapt_partial",
]

COLOR_LR = 0.05


def choose_subset(n: int, ratio: float, seed: int = 0) -> np.ndarray:
    """Sorted indices of ``round(ratio * n)`` atoms drawn without replacement."""
    if not 0 < ratio <= 1:
        raise InvalidInputError("ratio must be in (0, 1]")
    k = min(n, int(np.floor(ratio * n + 0.5)))
    if k == n:
        return np.arange(n)
    return np.sort(stream(seed, 0x5EB5E7).permutation(n)[:k])


# --------------------------------------------------------------------------
# mode-collapse benchmark
# --------------------------------------------------------------------------


@dataclass
class BenchmarkResult:
    metrics: MetricReport
    train: TrainResult
    trained_index: np.ndarray
    heights: np.ndarray
    generated: np.ndarray
    predict_time: float
    predict_optimizer_steps: int


def mode_benchmark(mix: ModeSpec, ratio: float = 1.0, cfg: TrainConfig | None = None,
                   n_generated: int = 10_000, seed: int = 0) -> BenchmarkResult:
    """Train on ``ratio`` of the mode means, predict the rest, score samples.

    The generated points are images of ``n_generated`` fresh source samples
    under the transport map built from the predicted heights of all modes.
    """
    cfg = cfg or TrainConfig(volume=VolumeConfig(seed=seed))
    target = DiscreteTarget(mix.means)
    source = mix.source()
    idx = choose_subset(target.n, ratio, seed)
    if idx.size < 2 and target.n >= 2:
        raise InvalidInputError("ratio leaves fewer than 2 training atoms")
    res = train_height_net(target.subset(idx), source, cfg)
    steps_before = res.net.adam.step
    t0 = time.perf_counter()
    h = predict_heights(res.net, target)
    predict_time = time.perf_counter() - t0
    X = source.draw(n_generated, stream(seed, 0x6E4))
    gen = transport_map(X, target, h)
    return BenchmarkResult(evaluate_modes(gen, mix), res, idx, h.values, gen, predict_time,
                           res.net.adam.step - steps_before)


# --------------------------------------------------------------------------
# images
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Image:
    """8-bit RGB image; ``pixels`` has shape ``(height, width, 3)``."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] == 0 or p.shape[1] == 0:
            raise InvalidInputError(f"expected a nonempty (h, w, 3) pixel array, got {p.shape}")
        object.__setattr__(self, "pixels", np.ascontiguousarray(p, dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def colors(self) -> np.ndarray:
        """Pixel colours as ``(h*w, 3)`` floats in [0, 1]."""
        return self.pixels.reshape(-1, 3).astype(np.float64) / 255.0

    @classmethod
    def from_colors(cls, colors, width: int, height: int) -> Image:
        c = np.clip(np.rint(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
        return cls(c.reshape(height, width, 3))


def read_ppm(path) -> Image:
    """Read a binary PPM (P6) with maxval 255."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InvalidInputError(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise InvalidInputError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise InvalidInputError(f"{path}: only maxval 255 is supported")
    pos += 1  # single whitespace byte after maxval
    body = data[pos : pos + w * h * 3]
    if len(body) != w * h * 3:
        raise InvalidInputError(f"{path}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return Image(np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3))


def write_ppm(path, img: Image) -> None:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


# --------------------------------------------------------------------------
# color transfer
# --------------------------------------------------------------------------


@dataclass
class ColorTransferResult:
    image: Image
    palette: np.ndarray
    assignment: np.ndarray
    train: TrainResult

    def histogram(self) -> np.ndarray:
        """Fraction of source pixels sent to each palette colour."""
        return np.bincount(self.assignment, minlength=self.palette.shape[0]) / self.assignment.size


def extract_palette(img: Image, k: int, seed: int = 0) -> np.ndarray:
    """Up to ``k`` distinct colours, in the order of a random pixel permutation."""
    if k < 1:
        raise InvalidInputError("palette size must be >= 1")
    colors = img.colors()
    perm = stream(seed, 0xC010).permutation(colors.shape[0])
    shuffled = colors[perm]
    _, first = np.unique(shuffled, axis=0, return_index=True)
    return shuffled[np.sort(first)[:k]]


def color_transfer(source_img: Image, target_img: Image, *, palette_size: int = 512,
                   cfg: TrainConfig | None = None, seed: int = 0) -> ColorTransferResult:
    """Recolour ``source_img`` with the palette of ``target_img``.

    Every output pixel is exactly one palette colour; spatial layout is kept.
    """
    cfg = cfg or TrainConfig(lr=COLOR_LR, volume=VolumeConfig(seed=seed))
    palette = extract_palette(target_img, palette_size, seed)
    target = DiscreteTarget(palette)
    source = SourceSpec.explicit(source_img.colors())
    res = train_height_net(target, source, cfg)
    assignment = assign_cells(source_img.colors(), target, res.heights, workers=cfg.workers)
    out = Image.from_colors(palette[assignment], source_img.width, source_img.height)
    return ColorTransferResult(out, palette, assignment, res)


# --------------------------------------------------------------------------
# domain adaptation
# --------------------------------------------------------------------------


@dataclass
class DAResult:
    mapped: np.ndarray
    predicted_labels: np.ndarray
    accuracy: float
    train: TrainResult


@dataclass
class PartialDAResult:
    accuracy_part: float
    accuracy_all: float
    trained_index: np.ndarray
    part: DAResult
    mapped_all: np.ndarray
    predict_time: float


def _da_config(cfg: TrainConfig | None, seed: int) -> TrainConfig:
    if cfg is None:
        return TrainConfig(scheme="global", max_iter=150, volume=VolumeConfig(seed=seed))
    return cfg


def _check_labeled(source, target):
    xs, ys = (np.asarray(a) for a in source)
    xt, yt = (np.asarray(a) for a in target)
    if xs.ndim != 2 or xt.ndim != 2 or xs.shape[0] == 0 or xt.shape[0] == 0:
        raise InvalidInputError("labelled sets must be nonempty (m, d) arrays")
    if xs.shape[1] != xt.shape[1]:
        raise InvalidInputError(f"source dimension {xs.shape[1]} != target dimension {xt.shape[1]}")
    if ys.shape[0] != xs.shape[0] or yt.shape[0] != xt.shape[0]:
        raise InvalidInputError("one label per point is required")
    return xs.astype(np.float64), ys, xt.astype(np.float64), yt


def domain_adapt(source, target, *, cfg: TrainConfig | None = None, seed: int = 0) -> DAResult:
    """Map labelled source points onto labelled target atoms and score labels.

    ``source`` and ``target`` are ``(points, labels)`` pairs.  Target points
    become atoms of uniform mass; each source point takes the label of the
    atom the transport map sends it to.
    """
    xs, ys, xt, yt = _check_labeled(source, target)
    cfg = _da_config(cfg, seed)
    atoms = DiscreteTarget(xt)
    res = train_height_net(atoms, SourceSpec.explicit(xs), cfg)
    idx = assign_cells(xs, atoms, res.heights, workers=cfg.workers)
    pred = yt[idx]
    return DAResult(xt[idx], pred, float(np.mean(pred == ys)), res)


def domain_adapt_partial(source, target, ratio: float, *, cfg: TrainConfig | None = None,
                         seed: int = 0) -> PartialDAResult:
    """Train on ``ratio`` of the target atoms, then score both maps.

    ``accuracy_part`` uses the map onto the trained atoms only;
    ``accuracy_all`` uses heights predicted by the network for every atom.
    """
    if not 0 < ratio < 1:
        raise InvalidInputError("ratio must be in (0, 1)")
    xs, ys, xt, yt = _check_labeled(source, target)
    idx = choose_subset(xt.shape[0], ratio, seed)
    if idx.size < 2:
        raise InvalidInputError("ratio leaves fewer than 2 training atoms")
    part = domain_adapt((xs, ys), (xt[idx], yt[idx]), cfg=cfg, seed=seed)
    cfg = _da_config(cfg, seed)
    t0 = time.perf_counter()
    h = predict_heights(part.train.net, xt)
    predict_time = time.perf_counter() - t0
    j = assign_cells(xs, xt, h, workers=cfg.workers)
    acc_all = float(np.mean(yt[j] == ys))
    return PartialDAResult(part.accuracy, acc_all, idx, part, xt[j], predict_time)


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, volume=replace(cfg.volume, seed=seed))
