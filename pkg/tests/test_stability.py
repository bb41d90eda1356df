import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coniclpv import ConicSector, SectorPair, check_sector_conditions, complementary_cone, l2_gain_estimate, qsr_matrices
from coniclpv.conic import supply_rate_series, windowed_integral
from coniclpv.errors import InconsistentTraceError, PreconditionError, SingularConeError
from coniclpv.sim import LoopTrace
from coniclpv.stability import loop_supply_series, split_supplies, verify_feedback_iqc

NOMINAL = ConicSector(-2.425, 7.575)


def test_complementary_examples():
    c = complementary_cone(ConicSector(-3.499, 7.501))
    assert (c.a, c.b) == pytest.approx((-0.133316, 0.285796), abs=1e-6)
    c = complementary_cone(NOMINAL, 0.01)
    assert (c.a, c.b) == pytest.approx((-0.122013, 0.402371), abs=1e-6)
    with pytest.raises(SingularConeError):
        complementary_cone(ConicSector(1.0, 2.0))
    with pytest.raises(SingularConeError):
        complementary_cone(ConicSector(0.0, 2.0))
    with pytest.raises(SingularConeError):
        complementary_cone(ConicSector(-1.0, 1.0), 1.5)


def test_boundary_condition_is_zero():
    pair = SectorPair(NOMINAL, complementary_cone(NOMINAL))
    c = check_sector_conditions(pair)
    assert abs(c.condition1) <= 1e-12 * abs(NOMINAL.a)
    assert not c.stable


def test_shrunk_controller_is_stable():
    c = check_sector_conditions(SectorPair(NOMINAL, complementary_cone(NOMINAL, 0.05)))
    assert c.condition1 > 0 and c.condition2 > 0 and c.stable


def test_symmetric_pair_conditions():
    s = ConicSector(0.5, 2.0)
    c = check_sector_conditions(SectorPair(s, s))
    assert c.condition1 == pytest.approx(1.0) and c.condition2 == pytest.approx(1.0)


sector = st.tuples(st.floats(-3, 3), st.floats(0.1, 3)).map(lambda p: ConicSector(p[0], p[0] + p[1])).filter(
    lambda s: abs(s.b) > 0.05
)


@settings(max_examples=100, deadline=None)
@given(p=sector, c=sector)
def test_condition2_swap_symmetry(p, c):
    a = check_sector_conditions(SectorPair(p, c)).condition2
    b = check_sector_conditions(SectorPair(c, p)).condition2
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_qsr_substitution_cases():
    s = ConicSector(1.0, 2.0)
    blk = qsr_matrices(SectorPair(s, s), 2)
    assert np.array_equal(blk.R, -np.eye(4))
    s = ConicSector(-1.0, 1.0)
    blk = qsr_matrices(SectorPair(s, s), 1)
    assert np.allclose(np.diag(blk.Q), 0.0)
    p, c = ConicSector(-0.3, 2.0), ConicSector(0.2, 1.5)
    blk = qsr_matrices(SectorPair(p, c), 3)
    I = np.eye(3)
    assert np.allclose(blk.Q[:3, 3:], 0.5 * (c.a / c.b - p.a / p.b) * I)
    assert np.allclose(blk.Q, blk.Q.T)
    assert np.allclose(blk.R, np.diag([-c.a] * 3 + [-p.a] * 3))
    assert np.allclose(blk.S, np.block([[0.5 * (1 + c.a / c.b) * I, p.a * I], [-c.a * I, 0.5 * (1 + p.a / p.b) * I]]))


def _random_loop(rng, k=400, m=1, corrupt=0.0):
    t = np.sort(np.concatenate([[0.0, 5.0], rng.uniform(0, 5, k - 2)]))
    y_c, y_p, u_c, u_p = (rng.standard_normal((k, m)) for _ in range(4))
    e_c = u_c + y_p
    e_c[k // 2] += corrupt
    z = np.zeros((k, 1))
    return LoopTrace(t, z, z, u_c, u_p, e_c, u_p - y_c, y_c, y_p)


@pytest.mark.parametrize("seed", range(5))
def test_loop_supply_decomposes(seed):
    rng = np.random.default_rng(seed)
    a_p, a_c = rng.uniform(-2, 0.5, 2)
    pair = SectorPair(ConicSector(a_p, a_p + rng.uniform(0.5, 3)), ConicSector(a_c, a_c + rng.uniform(0.5, 3)))
    m = 1 + seed % 2
    tr = _random_loop(rng, m=m)
    total = verify_feedback_iqc(pair, tr)
    w_c, w_p = split_supplies(pair, tr)
    parts = windowed_integral(tr.t, w_c, 0, 5) + windowed_integral(tr.t, w_p, 0, 5)
    assert total == pytest.approx(parts, rel=1e-9, abs=1e-12)
    # samplewise too
    w = loop_supply_series(qsr_matrices(pair, m), tr.y, tr.u)
    assert np.allclose(w, w_c + w_p, rtol=1e-9, atol=1e-12)


def test_literal_cross_term_breaks_decomposition():
    # the cross block read as (a_p/b_p - a_c/b_c) does not reproduce the subsystem supplies
    rng = np.random.default_rng(1)
    pair = SectorPair(ConicSector(-0.5, 2.0), ConicSector(-0.2, 1.0))
    blk = qsr_matrices(pair, 1)
    lit = blk.Q.copy()
    p, c = pair.plant, pair.controller
    lit[0, 1] = lit[1, 0] = p.a / p.b - c.a / c.b
    tr = _random_loop(rng)
    w_c, w_p = split_supplies(pair, tr)
    w_lit = loop_supply_series(type(blk)(lit, blk.S, blk.R), tr.y, tr.u)
    assert np.max(np.abs(w_lit - (w_c + w_p))) > 1e-3


def test_zero_trace_and_corruption():
    pair = SectorPair(NOMINAL, complementary_cone(NOMINAL, 0.05))
    z = np.zeros((10, 1))
    tr = LoopTrace(np.linspace(0, 1, 10), z, z, z, z, z, z, z, z)
    assert verify_feedback_iqc(pair, tr) == 0.0
    with pytest.raises(InconsistentTraceError):
        verify_feedback_iqc(pair, _random_loop(np.random.default_rng(0), corrupt=1e-3))


def test_gain_symmetric_characterization():
    s = ConicSector(0.5, 2.0)
    g = l2_gain_estimate(SectorPair(s, s))
    assert g.beta == pytest.approx(0.5 + 1e-9, abs=1e-15)
    assert g.lambda_r == -0.5
    assert g.zeta == pytest.approx(1.0, abs=1e-8)
    # the literal formula collapses to the beta offset
    assert 0 < g.gamma_formula < 1e-8
    assert g.gamma > 1.0


def test_gain_nominal_and_m_invariance():
    pair = SectorPair(NOMINAL, complementary_cone(NOMINAL, 0.05))
    g1 = l2_gain_estimate(pair, 1)
    g3 = l2_gain_estimate(pair, 3)
    assert np.isfinite(g1.gamma) and g1.gamma > 0 and g1.gamma_formula > 0
    assert g1.degenerate  # both lower bounds are negative
    assert g3.gamma == pytest.approx(g1.gamma, rel=1e-12)
    assert g3.gamma_formula == pytest.approx(g1.gamma_formula, rel=1e-12)


def test_gain_precondition():
    with pytest.raises(PreconditionError):
        l2_gain_estimate(SectorPair(NOMINAL, complementary_cone(NOMINAL)))


def test_supply_series_matches_qsr_diagonal():
    pair = SectorPair(ConicSector(-0.5, 2.0), ConicSector(-0.2, 1.0))
    tr = _random_loop(np.random.default_rng(3))
    w_c, _ = split_supplies(pair, tr)
    assert np.allclose(w_c, supply_rate_series(pair.controller, tr.e_c, tr.y_c))
