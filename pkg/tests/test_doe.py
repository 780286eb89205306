import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maxent_doe.doe import (DoeConfig, build_objective, fit_spacing, loo_errors, normalize_field, propose,
                            propose_batch, q_error, q_spacing, run_doe, search_grid, spacing_kernel_param)
from maxent_doe.errors import ConditioningError, ConfigurationError, DataError, ParameterError
from maxent_doe.geometry import Domain, NodeSet, make_grid
from maxent_doe.holmes import MetaModel
from maxent_doe.testbed import SQUARE, test_function

SEED = make_grid(SQUARE, 5).points


def _model(fid, P=SEED, scale=1.0):
    return MetaModel(NodeSet(P, scale * test_function(fid)(P), domain=SQUARE))


def test_config_validation():
    for bad in (dict(R0=0), dict(eps_floor=1), dict(boundary_margin=0.5), dict(search_grid=1),
                dict(n_per_batch=0), dict(objective="greedy")):
        with pytest.raises(ParameterError):
            DoeConfig(**bad)


def test_normalize_examples():
    np.testing.assert_allclose(normalize_field([0, 5, 10]), [1e-4, 0.5 + 0.5e-4, 1.0])
    np.testing.assert_array_equal(normalize_field([3, 3, 3]), [1, 1, 1])
    np.testing.assert_allclose(normalize_field([2, 4]), [1e-4, 1])
    # values within round-off of the minimum snap to it
    np.testing.assert_allclose(normalize_field([0.0, 1e-14, 1.0]), [1e-4, 1e-4, 1.0])
    with pytest.raises(DataError):
        normalize_field([0.0, np.nan])


@given(arrays(float, 20, elements=st.floats(-1e6, 1e6)), st.floats(1e-3, 1e3), st.floats(-1e3, 1e3))
def test_normalize_is_affine_invariant(v, a, b):
    out = normalize_field(v)
    assert np.all((out >= 1e-4) & (out <= 1.0))
    # skip inputs whose spread sits near the rounding threshold
    spread = np.ptp(v)
    if spread > 1e-6 * max(1.0, np.abs(v).max()):
        np.testing.assert_allclose(normalize_field(a * v + b), out, atol=1e-7)


def test_spacing_kernel_examples():
    # one node at the centre of [-1, 1]: fill distance sqrt(2), so R_supp = R0 sqrt(2) / 2
    centre = np.zeros((1, 2))
    r0 = np.sqrt(2.0)
    assert spacing_kernel_param(centre, SQUARE, R0=r0) == pytest.approx(np.log(100), rel=1e-12)
    line = Domain.cube(0.0, 2.0, 1)
    xi = spacing_kernel_param([[0.0], [1.0], [2.0]], line, R0=1.25, resolution=101)
    assert xi == pytest.approx(np.log(100) / 0.3125 ** 2) and xi == pytest.approx(47.15, abs=1e-2)
    assert spacing_kernel_param(SEED, SQUARE, R0=2.5) == pytest.approx(spacing_kernel_param(SEED, SQUARE) / 4)
    with pytest.raises(ParameterError):
        spacing_kernel_param(SEED, SQUARE, tol=1.0)


def test_fit_spacing_examples():
    one = fit_spacing([[0.3, 0.1]], 2.0)
    assert one.nu.tolist() == [1.0]
    x = np.array([[0.0, 0.0]])
    assert one(x)[0] == pytest.approx(np.exp(-2.0 * 0.1))
    D, xi = 0.4, 5.0
    two = fit_spacing([[0.0, 0.0], [D, 0.0]], xi)
    np.testing.assert_allclose(two.nu, 1 / (1 + np.exp(-xi * D * D)))
    rng = np.random.default_rng(0)
    P = rng.uniform(-1, 1, (30, 2))
    m = fit_spacing(P, 10.0)
    np.testing.assert_allclose(m(P), 1.0, atol=1e-8)
    with pytest.raises(ConditioningError):
        fit_spacing([[0.0, 0.0], [1e-9, 0.0]], 1.0)


def test_q_spacing_examples():
    m = fit_spacing([[-0.5, 0.0], [0.5, 0.0]], 20.0)
    assert q_spacing(m, [[-0.5, 0.0]])[0] == pytest.approx(0.0, abs=1e-12)
    assert q_spacing(m, [[50.0, 50.0]])[0] == pytest.approx(1.0)
    mid = q_spacing(m, [[0.0, 0.0]])[0]
    assert 0 < mid < 1


def test_loo_examples():
    loo, failed = loo_errors(_model("T0"))
    assert loo.max() <= 1e-8 and not failed.any()
    flat = MetaModel(NodeSet(SEED, np.full(25, 2.0), domain=SQUARE))
    np.testing.assert_allclose(loo_errors(flat)[0], 0.0, atol=1e-12)
    v = test_function("T0")(SEED)
    v[12] += 1.0
    spiked = MetaModel(NodeSet(SEED, v, domain=SQUARE))
    assert np.argmax(loo_errors(spiked)[0]) == 12
    with pytest.raises(ParameterError):
        loo_errors(MetaModel(NodeSet([[0.0, 0.0]], [1.0], domain=SQUARE)))


def test_q_error_examples():
    model = _model("T1")
    pts = search_grid(SQUARE).points
    np.testing.assert_array_equal(q_error(model, np.full(25, 0.3), pts[:5]), 0.3)
    loo = normalize_field(loo_errors(model)[0])
    qe = q_error(model, loo, pts)
    assert qe.min() >= 1e-4 and qe.max() <= 1.0
    # the approximant does not interpolate, but a smooth nodal field survives at the nodes
    P = make_grid(SQUARE, 9).points
    fine = MetaModel(NodeSet(P, np.zeros(81), domain=SQUARE))
    smooth = normalize_field(np.exp(-np.sum(P ** 2, axis=1)))
    assert np.max(np.abs(q_error(fine, smooth, P) - smooth)) < 0.1


def test_search_grid_respects_margin():
    g = search_grid(SQUARE, 41, 0.02)
    assert g.points.shape[0] == 39 * 39
    assert np.abs(g.points).max() <= 0.96 + 1e-12
    with pytest.raises(ConfigurationError):
        search_grid(SQUARE, 2, 0.4)


def test_plane_makes_lap_and_error_neutral():
    fld = build_objective(_model("T0"), DoeConfig())
    np.testing.assert_array_equal(fld.qL, 1.0)
    np.testing.assert_array_equal(fld.qE, 1.0)
    np.testing.assert_array_equal(fld.S, fld.qS)


def test_objective_bounds_and_hill_focus():
    fld = build_objective(_model("T1"), DoeConfig())
    assert fld.S.min() >= 1e-12 * (1 - 1e-12) and fld.S.max() <= 1.0
    for q in (fld.qL, fld.qS, fld.qE):
        assert q.min() >= 1e-4 and q.max() <= 1.0
    np.testing.assert_allclose(fld.S, fld.qL * fld.qS * fld.qE)
    assert np.linalg.norm(fld.grid.points[np.argmax(fld.S)]) < 0.6


def test_batch_picks_are_distinct_and_new():
    batch, fld = propose(_model("T1"), DoeConfig(), n_p=8)
    assert len({tuple(p) for p in batch}) == 8
    d = np.linalg.norm(batch[:, None] - SEED[None], axis=2)
    assert d.min() > 0
    assert np.abs(batch).max() <= 0.96 + 1e-12
    # the first pick is the plain argmax of S
    np.testing.assert_array_equal(batch[0], fld.grid.points[np.argmax(fld.S)])


def test_batch_keeps_laplacian_and_error_frozen():
    cfg = DoeConfig()
    fld = build_objective(_model("T1"), cfg)
    batch = propose_batch(fld, SEED, 2, SQUARE)
    # the second pick maximizes the frozen qL qE against the refit spacing factor
    refit = normalize_field(q_spacing(fit_spacing(np.vstack([SEED, batch[:1]]), fld.xi), fld.grid.points))
    S = fld.qL * fld.qE * refit
    S[np.all(fld.grid.points == batch[0], axis=1)] = -np.inf
    np.testing.assert_array_equal(batch[1], fld.grid.points[np.argmax(S)])


def test_scaling_values_leaves_proposals_unchanged():
    a, _ = propose(_model("T1"), DoeConfig(), n_p=4)
    b, _ = propose(_model("T1", scale=37.5), DoeConfig(), n_p=4)
    np.testing.assert_array_equal(a, b)


def test_plane_proposals_match_spacing_only():
    a, _ = propose(_model("T0"), DoeConfig(), n_p=6)
    b, _ = propose(_model("T0"), DoeConfig(objective="spacing"), n_p=6)
    np.testing.assert_array_equal(a, b)


def test_run_doe_zero_iterations_keeps_seed():
    hist = run_doe(test_function("T1"), DoeConfig(n_outer=0), SEED, SQUARE)
    np.testing.assert_array_equal(hist.positions, SEED)
    assert hist.iterations == []


def test_run_doe_grows_and_is_deterministic():
    cfg = DoeConfig(n_per_batch=4, n_outer=2)
    h1 = run_doe(test_function("T1"), cfg, SEED, SQUARE)
    h2 = run_doe(test_function("T1"), cfg, SEED, SQUARE)
    assert h1.n == 25 + 8
    assert h1.origin.tolist() == [-1] * 25 + [0] * 4 + [1] * 4
    np.testing.assert_array_equal(h1.positions, h2.positions)


def test_run_doe_records_oracle_failure():
    calls = []

    def oracle(P):
        calls.append(len(P))
        if len(calls) > 1:
            raise RuntimeError("instrument offline")
        return test_function("T1")(P)

    hist = run_doe(oracle, DoeConfig(n_per_batch=2, n_outer=3), SEED, SQUARE)
    assert hist.aborted and hist.n == 25
    assert "instrument offline" in hist.iterations[0].error
