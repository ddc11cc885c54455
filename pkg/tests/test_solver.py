import json

import numpy as np
import pytest

from neural_sdot.core import DiscreteTarget, SourceSpec, assign_cells
from neural_sdot.errors import InvalidInputError
from neural_sdot.heightnet import dumps_checkpoint
from neural_sdot.solver import (
    TrainConfig,
    estimate_volumes,
    optimize_heights_direct,
    predict_heights,
    reuse_error_report,
    run_report,
    train_height_net,
)
from neural_sdot.synth import ring
from neural_sdot.volume import VolumeConfig, estimate_volumes_global
from oracles import two_atom_heights_1d

SMALL = TrainConfig(hidden=(32, 32, 32), lr=0.01)
UNIT = SourceSpec.uniform_box([0.0], [1.0])
SKEW = DiscreteTarget([[0.0], [1.0]], [0.3, 0.7])


def test_config_validation_and_schemes():
    for bad in ({"delta": 0}, {"max_iter": 0}, {"scheme": "x"}, {"bn_mode": "y"}):
        with pytest.raises(InvalidInputError):
            TrainConfig(**bad)
    cfg = TrainConfig()
    assert cfg.resolved_scheme(1024) == "global" and cfg.resolved_scheme(1025) == "batched"
    v = cfg.volume_for(2500)
    assert v.atom_batch_size == 1024 and v.atom_batches == 3
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_batched_scheme_is_used_when_requested():
    tgt = DiscreteTarget([[0.0], [1.0], [2.0], [3.0]])
    cfg = TrainConfig(scheme="batched", volume=VolumeConfig(samples_per_batch=100, atom_batches=2))
    s = estimate_volumes(UNIT, tgt, np.zeros(4), cfg)
    # atom 1 wins its batch and atom 3 wins its batch for every x > 0
    assert s.sample_count == 200 and s.counts.tolist() == [0, 100, 0, 100]


@pytest.mark.parametrize(
    "target, source, expected",
    [
        (DiscreteTarget([[-1.0], [1.0]]), SourceSpec.uniform_box([-1.0], [1.0]), [0.0, 0.0]),
        (SKEW, UNIT, two_atom_heights_1d(0.0, 1.0, 0.3)),
        (DiscreteTarget([[-1.0, 0.0], [1.0, 0.0]]), SourceSpec.uniform_box([-1, -1], [1, 1]), [0.0, 0.0]),
    ],
)
def test_direct_solver_analytic(target, source, expected):
    res = optimize_heights_direct(target, source, TrainConfig())
    assert res.converged
    assert np.abs(res.heights.values - expected).max() <= 0.02
    assert res.heights.centered


def test_direct_solver_reports_nonconvergence():
    res = optimize_heights_direct(SKEW, UNIT, TrainConfig(max_iter=1, delta=1e-6))
    assert not res.converged and res.iterations == 1 and res.grad_norm > 1e-6


def test_direct_solver_rejects_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        optimize_heights_direct(SKEW, SourceSpec.uniform_box([0, 0], [1, 1]), TrainConfig())


def test_single_atom_converges_immediately():
    res = train_height_net(DiscreteTarget([[0.4, 0.2]]), SourceSpec.uniform_box([0, 0], [1, 1]), SMALL)
    assert res.converged and res.iterations == 0 and res.grad_norm == 0.0
    assert res.heights.values.tolist() == [0.0]


def test_training_recovers_analytic_heights():
    res = train_height_net(SKEW, UNIT, SMALL)
    assert res.converged and res.grad_norm <= SMALL.delta
    assert np.abs(res.heights.values - [0.15, -0.15]).max() <= 0.02
    assert res.history[-1] == res.grad_norm


def test_training_is_deterministic():
    a = train_height_net(SKEW, UNIT, SMALL)
    b = train_height_net(SKEW, UNIT, SMALL)
    assert dumps_checkpoint(a.net) == dumps_checkpoint(b.net)
    assert np.array_equal(a.heights.values, b.heights.values)


def test_training_nonconvergence_keeps_partial_result():
    res = train_height_net(SKEW, UNIT, TrainConfig(hidden=(8, 8, 8), max_iter=2, delta=1e-6))
    assert not res.converged and res.iterations == 2 and len(res.history) == 3


def test_ring_marginals_after_training():
    mix = ring()
    tgt = DiscreteTarget(mix.means)
    cfg = TrainConfig(hidden=(64, 64, 64), lr=0.01)
    res = train_height_net(tgt, mix.source(), cfg)
    assert res.converged
    N = 200_000
    w = estimate_volumes_global(mix.source(), tgt, res.heights, N, seed=99).volumes
    assert np.abs(w - tgt.masses).max() <= max(cfg.delta, 3 / np.sqrt(N)) + 3 / np.sqrt(N)


def test_eval_mode_batchnorm_training_runs():
    cfg = TrainConfig(hidden=(16, 16, 16), lr=0.01, bn_mode="eval")
    res = train_height_net(SKEW, UNIT, cfg)
    assert res.converged


def test_predict_heights_matches_training_exit():
    res = train_height_net(SKEW, UNIT, SMALL)
    h = predict_heights(res.net, SKEW)
    assert np.array_equal(h.values, res.heights.values)
    steps = res.net.adam.step
    dup = predict_heights(res.net, np.array([[0.5], [0.5], [0.0]]))
    assert dup.values[0] == dup.values[1]
    assert res.net.adam.step == steps
    with pytest.raises(InvalidInputError):
        predict_heights(res.net, np.zeros((2, 2)))


def test_reuse_error_report_full_subset():
    res = train_height_net(SKEW, UNIT, SMALL)
    rep = reuse_error_report(res.net, SKEW, [0, 1], UNIT, TrainConfig())
    assert rep.m == 0 and rep.held_out_errors == [] and rep.tau1 == 0.0
    assert rep.bound == pytest.approx(rep.epsilon)
    assert rep.usable and rep.epsilon <= 0.02


def test_reuse_error_report_bound_holds():
    tgt = DiscreteTarget([[0.0], [0.5], [1.0]], [0.2, 0.5, 0.3])
    res = train_height_net(tgt.subset([0, 2]), UNIT, SMALL)
    rep = reuse_error_report(res.net, tgt, [0, 2], UNIT, TrainConfig())
    assert rep.m == 1 and np.isfinite(rep.tau1) and np.isfinite(rep.epsilon)
    assert rep.total_error <= rep.bound + 1e-12
    with pytest.raises(InvalidInputError):
        reuse_error_report(res.net, tgt, [0, 5], UNIT, TrainConfig())


def test_reuse_error_report_flags_unusable_oracle():
    res = train_height_net(SKEW, UNIT, SMALL)
    rep = reuse_error_report(res.net, SKEW, [0], UNIT, TrainConfig(max_iter=1, delta=1e-9))
    assert not rep.usable


def test_run_report_contents():
    res = train_height_net(SKEW, UNIT, SMALL)
    rep = run_report(res, SMALL, predict_time=0.001)
    assert rep["converged"] is True and rep["iterations"] == res.iterations
    assert rep["config"]["delta"] == SMALL.delta and rep["config"]["volume"]["seed"] == 0
    assert set(rep["metadata"]) == {"timestamp", "wall_time_train", "wall_time_predict"}
    json.dumps(rep)


def test_map_from_trained_net_respects_masses():
    res = train_height_net(SKEW, UNIT, SMALL)
    X = np.linspace(0, 1, 10_001)[:, None]
    frac = np.bincount(assign_cells(X, SKEW, res.heights), minlength=2) / X.shape[0]
    assert np.abs(frac - [0.3, 0.7]).max() <= 0.02


@pytest.mark.parametrize("which", ["direct", "net"])
def test_exact_balance_recovers_optimal_permutation(which):
    # With m source points and m atoms, a zero gradient means every cell holds
    # one point; a Laguerre assignment that is a bijection is the optimal
    # permutation, which an exact assignment solver finds independently.
    linear_sum_assignment = pytest.importorskip("scipy.optimize").linear_sum_assignment
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 2))
    Y = rng.normal(size=(30, 2)) + [1.0, 0.0]
    tgt, src = DiscreteTarget(Y), SourceSpec.explicit(X)
    cfg = TrainConfig(delta=1e-9, max_iter=5000, hidden=(64, 64, 64), lr=0.01, scheme="global")
    res = optimize_heights_direct(tgt, src, cfg) if which == "direct" else train_height_net(tgt, src, cfg)
    assert res.converged and res.grad_norm == 0.0
    _, col = linear_sum_assignment(((X[:, None] - Y[None]) ** 2).sum(-1))
    assert np.array_equal(assign_cells(X, tgt, res.heights), col)
