"""Height optimisers: Adam on a raw height vector, and Adam on a height net.

Both minimise the semi-discrete energy through its gradient
``w_hat(h) - nu`` and stop once the Monte Carlo gradient norm drops to the
tolerance.  The trained network can then produce heights for atoms it never
saw (:func:`predict_heights`) without any further optimisation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import DiscreteTarget, HeightVector, SourceSpec, project_zero_mean
from .errors import InvalidInputError
from .heightnet import HeightNet
from .volume import (
    VolumeConfig,
    energy_gradient,
    estimate_volumes_batched,
    estimate_volumes_global,
)

__all__ = [
    "TrainConfig",
    "DirectResult",
    "TrainResult",
    "ReuseErrorReport",
    "estimate_volumes",
    "optimize_heights_direct",
    "train_height_net",
    "predict_heights",
    "reuse_error_report",
    "run_report",
]

log = logging.getLogger(__name__)

GLOBAL_SCHEME_MAX_ATOMS = 1024
DEFAULT_ATOM_BATCH = 1024


@dataclass(frozen=True)
class TrainConfig:
    delta: float = 1e-2
    max_iter: int = 2000
    volume: VolumeConfig = field(default_factory=VolumeConfig)
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    scheme: str = "auto"  # "auto" | "global" | "batched"
    bn_mode: str = "train"  # batch-norm mode during volume passes
    hidden: tuple = (512, 512, 512)
    batch_norm: bool = True
    workers: int = 1

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidInputError("delta must be > 0")
        if self.max_iter < 1:
            raise InvalidInputError("max_iter must be >= 1")
        if self.scheme not in ("auto", "global", "batched"):
            raise InvalidInputError(f"unknown volume scheme {self.scheme!r}")
        if self.bn_mode not in ("train", "eval"):
            raise InvalidInputError(f"unknown batch-norm mode {self.bn_mode!r}")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))

    @property
    def seed(self) -> int:
        return self.volume.seed

    def resolved_scheme(self, n: int) -> str:
        if self.scheme != "auto":
            return self.scheme
        return "global" if n <= GLOBAL_SCHEME_MAX_ATOMS else "batched"

    def volume_for(self, n: int) -> VolumeConfig:
        """Volume config with the atom partition filled in for ``n`` atoms."""
        v = self.volume
        if self.resolved_scheme(n) == "global":
            return replace(v, atom_batches=1, atom_batch_size=n)
        if v.atom_batch_size is None and v.atom_batches == 1:
            b = min(n, DEFAULT_ATOM_BATCH)
            return replace(v, atom_batches=-(-n // b), atom_batch_size=b)
        return v

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        d["volume"] = VolumeConfig(**d.get("volume", {}))
        return cls(**d)


@dataclass
class DirectResult:
    heights: HeightVector
    converged: bool
    grad_norm: float
    iterations: int
    history: list = field(default_factory=list)


@dataclass
class TrainResult:
    net: HeightNet
    heights: HeightVector
    converged: bool
    grad_norm: float
    iterations: int
    train_time: float
    history: list = field(default_factory=list)


@dataclass
class ReuseErrorReport:
    epsilon: float
    held_out_errors: list
    tau1: float
    bound: float
    total_error: float
    usable: bool
    n_trained: int
    oracle_grad_norm: float

    @property
    def m(self) -> int:
        return len(self.held_out_errors)

    @property
    def in_sample_rms(self) -> float:
        return self.epsilon / np.sqrt(self.n_trained) if self.n_trained else 0.0

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "m": self.m,
            "held_out_errors": list(self.held_out_errors),
            "tau1": self.tau1,
            "bound": self.bound,
            "total_error": self.total_error,
            "in_sample_rms": self.in_sample_rms,
            "usable": self.usable,
            "oracle_grad_norm": self.oracle_grad_norm,
        }


def estimate_volumes(source: SourceSpec, target: DiscreteTarget, h, cfg: TrainConfig, iteration: int = 0):
    """Volume pass with the scheme ``cfg`` selects for this target size."""
    vcfg = cfg.volume_for(target.n)
    if cfg.resolved_scheme(target.n) == "global":
        return estimate_volumes_global(source, target, h, vcfg.samples_per_batch, vcfg.seed,
                                       iteration=iteration, workers=cfg.workers)
    return estimate_volumes_batched(source, target, h, vcfg, iteration=iteration, workers=cfg.workers)


def _check_pair(target: DiscreteTarget, source: SourceSpec) -> None:
    if target.dim != source.dim:
        raise InvalidInputError(f"target dimension {target.dim} != source dimension {source.dim}")


def optimize_heights_direct(target: DiscreteTarget, source: SourceSpec, cfg: TrainConfig,
                            h0=None) -> DirectResult:
    """Adam on the height vector itself, projected to zero mean each step.

    Starts from ``-|y|^2 / 2`` (the plain Voronoi diagram) unless ``h0`` is
    given.
    """
    _check_pair(target, source)
    Y = target.atoms
    h = project_zero_mean(-0.5 * (Y * Y).sum(axis=1) if h0 is None else h0).values
    if h.shape[0] != target.n:
        raise InvalidInputError("initial heights do not match the target")
    m, v = np.zeros_like(h), np.zeros_like(h)
    b1, b2 = cfg.beta1, cfg.beta2
    history = []
    it = 0
    while True:
        stats = estimate_volumes(source, target, h, cfg, iteration=it)
        g, norm = energy_gradient(stats, target)
        history.append(norm)
        if norm <= cfg.delta or it >= cfg.max_iter:
            break
        it += 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        h = h - cfg.lr * (m / (1 - b1**it)) / (np.sqrt(v / (1 - b2**it)) + cfg.adam_eps)
        h = h - h.mean()
    converged = norm <= cfg.delta
    if not converged:
        log.warning("direct solver stopped after %d iterations with |grad| = %.4g", it, norm)
    return DirectResult(project_zero_mean(h), converged, norm, it, history)


def train_height_net(target: DiscreteTarget, source: SourceSpec, cfg: TrainConfig,
                     net: HeightNet | None = None) -> TrainResult:
    """Fit a height network until ``|w_hat - nu|_2 <= delta``.

    Every iteration evaluates the network on the full atom set (one
    normalisation batch), centres the heights, estimates cell volumes with
    the configured scheme and takes one Adam step on the network parameters
    along ``sum_i (w_hat_i - nu_i) dH(y_i)/dw``.  The gradient norm that
    decides termination comes from the same volume pass.

    On exit the batch-norm running statistics are set to the statistics of
    the full atom set, so the returned (inference-mode) heights are exactly
    the heights of the last volume pass.
    """
    _check_pair(target, source)
    Y = target.atoms
    n = target.n
    if net is None:
        net = HeightNet(target.dim, cfg.hidden, batch_norm=cfg.batch_norm, seed=cfg.seed,
                        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, adam_eps=cfg.adam_eps)
    elif net.dim != target.dim:
        raise InvalidInputError(f"network input width {net.dim} != target dimension {target.dim}")
    bn_training = cfg.bn_mode == "train" and net.batch_norm
    if bn_training and n < 2:
        # A single atom owns the whole domain; no batch statistics exist.
        bn_training = False
    t0 = time.perf_counter()
    history = []
    it = 0
    while True:
        h = net(Y, training=bn_training)
        h = h - h.mean()
        stats = estimate_volumes(source, target, h, cfg, iteration=it)
        g, norm = energy_gradient(stats, target)
        history.append(norm)
        if norm <= cfg.delta or it >= cfg.max_iter:
            break
        net.step(net.backward(g))
        it += 1
    if bn_training:
        net.set_running_stats(Y)
    net.eval()
    heights = project_zero_mean(net(Y, training=False))
    train_time = time.perf_counter() - t0
    converged = norm <= cfg.delta
    if not converged:
        log.warning("height net stopped after %d iterations with |grad| = %.4g", it, norm)
    return TrainResult(net, heights, converged, norm, it, train_time, history)


def predict_heights(net: HeightNet, atoms) -> HeightVector:
    """Centred inference-mode heights for any set of atoms (no training)."""
    Y = atoms.atoms if isinstance(atoms, DiscreteTarget) else np.asarray(atoms, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[1] != net.dim:
        raise InvalidInputError(f"atoms of dimension {Y.shape[1]} for a network of input width {net.dim}")
    h = net(Y, training=False)
    net._cache = None
    return project_zero_mean(h)


def reuse_error_report(net: HeightNet, full_target: DiscreteTarget, trained_subset,
                       source: SourceSpec, cfg: TrainConfig) -> ReuseErrorReport:
    """Compare predicted heights against the direct solver on the full target.

    ``epsilon`` is the 2-norm of the error over the trained atoms, ``tau1``
    the largest absolute error over the held-out atoms, and ``bound`` is
    ``sqrt(epsilon^2 + m * tau1^2)``.  Both vectors are centred first.
    """
    trained = np.zeros(full_target.n, dtype=bool)
    idx = np.asarray(trained_subset, dtype=np.int64)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= full_target.n:
        raise InvalidInputError("trained subset must index atoms of the full target")
    trained[idx] = True
    oracle = optimize_heights_direct(full_target, source, cfg)
    h = predict_heights(net, full_target).values
    diff = h - oracle.heights.values
    eps = float(np.linalg.norm(diff[trained]))
    held = np.abs(diff[~trained])
    tau1 = float(held.max()) if held.size else 0.0
    bound = float(np.sqrt(eps**2 + held.size * tau1**2))
    return ReuseErrorReport(
        epsilon=eps,
        held_out_errors=held.tolist(),
        tau1=tau1,
        bound=bound,
        total_error=float(np.linalg.norm(diff)),
        usable=oracle.converged,
        n_trained=int(trained.sum()),
        oracle_grad_norm=oracle.grad_norm,
    )


def run_report(result: TrainResult, cfg: TrainConfig, *, predict_time: float | None = None,
               extra: dict | None = None) -> dict:
    """JSON-ready training report; wall times live under ``metadata``."""
    report = {
        "config": cfg.to_dict(),
        "converged": bool(result.converged),
        "final_grad_norm": float(result.grad_norm),
        "iterations": int(result.iterations),
        "metadata": {
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "wall_time_train": result.train_time,
            "wall_time_predict": predict_time,
        },
    }
    if extra:
        report.update(extra)
    return report
