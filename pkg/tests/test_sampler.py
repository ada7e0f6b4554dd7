import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoway_cvqkd import sampler as sp
from twoway_cvqkd.errors import DegenerateWarning, DomainError, FactorizationError, InsufficientDataError
from twoway_cvqkd.gaussian import CovarianceMatrix
from twoway_cvqkd.protocols import HET2M_MODES, build_het2m_closed_form, key_rate

from conftest import BASELINE


@pytest.fixture(scope="module")
def scen():
    from twoway_cvqkd.analysis import Settings

    return Settings(**BASELINE, distance_km=20.0).scenario("Het2M")


@pytest.fixture(scope="module")
def gamma7(scen):
    return build_het2m_closed_form(scen)


@pytest.fixture(scope="module")
def big_run(gamma7):
    shots = sp.sample_shots(gamma7, 100_000, seed=11)
    return shots, sp.estimate_cm(shots)


def vacuum7():
    return CovarianceMatrix(np.eye(14), HET2M_MODES)


# --- sampling -----------------------------------------------------------------

def test_vacuum_outcomes_have_unit_variance():
    shots = sp.sample_shots(vacuum7(), 100_000, seed=3)
    var = shots.outcomes.var(axis=0)
    assert np.all(np.abs(var - 1) < 0.02)
    assert abs(shots.a2_value.var() - 1) < 0.02


def test_basis_choice_is_fair(big_run):
    shots, _ = big_run
    assert 0.49 <= shots.a2_is_x.mean() <= 0.51


def test_same_seed_same_shots(gamma7):
    a = sp.sample_shots(gamma7, 500, seed=5)
    b = sp.sample_shots(gamma7, 500, seed=5)
    c = sp.sample_shots(gamma7, 500, seed=6)
    np.testing.assert_array_equal(a.outcomes, b.outcomes)
    np.testing.assert_array_equal(a.a2_is_x, b.a2_is_x)
    assert not np.array_equal(a.outcomes, c.outcomes)


@settings(max_examples=20, deadline=None)
@given(start=st.integers(0, 400), n=st.integers(1, 100))
def test_slices_reproduce_the_serial_stream(start, n):
    g = vacuum7()
    full = sp.sample_shots(g, 500, seed=9)
    part = sp.sample_shots(g, n, seed=9, start=start)
    np.testing.assert_array_equal(part.outcomes, full.outcomes[start : start + n])
    np.testing.assert_array_equal(part.a2_value, full.a2_value[start : start + n])
    np.testing.assert_array_equal(part.index, np.arange(start, start + n))


def test_chunk_boundary_is_seamless():
    g = vacuum7()
    n = sp._CHUNK + 10
    full = sp.sample_shots(g, n, seed=1)
    tail = sp.sample_shots(g, 20, seed=1, start=sp._CHUNK - 10)
    np.testing.assert_array_equal(tail.outcomes, full.outcomes[-20:])


def test_non_psd_matrix_is_rejected():
    g = vacuum7()
    i, j = g.qindex("B2X", "x"), g.qindex("B1X", "x")
    m = np.eye(14)
    m[i, j] = m[j, i] = 2.0
    with pytest.raises(FactorizationError):
        sp.sample_shots(CovarianceMatrix(m, HET2M_MODES), 10, seed=0)


@pytest.mark.parametrize("n,seed", [(0, 0), (10, -1), (10, 2**128)])
def test_bad_sampling_arguments(n, seed):
    with pytest.raises(DomainError):
        sp.sample_shots(vacuum7(), n, seed)


def test_wrong_mode_count_rejected():
    with pytest.raises(DomainError):
        sp.sample_shots(np.eye(12), 10, 0)


# --- estimation ---------------------------------------------------------------

def test_estimate_within_five_standard_errors(gamma7, big_run):
    _, est = big_run
    g = gamma7.relabel(HET2M_MODES).matrix
    i, j = gamma7.qindex("A2", "x"), gamma7.qindex("A2", "p")
    dev = np.abs(est.cm.matrix - g) / np.where(est.stderr > 0, est.stderr, np.inf)
    dev[i, j] = dev[j, i] = 0.0
    assert dev.max() < 5.0


def test_b2_a2_correlation_within_three_se(gamma7, big_run):
    _, est = big_run
    for q in "xp":
        a, b = ("B2X", "x") if q == "x" else ("B2P", "p")
        i, j = gamma7.qindex(a, b), gamma7.qindex("A2", q)
        assert abs(est.cm.matrix[i, j] - gamma7.matrix[i, j]) < 3 * est.stderr[i, j]


def test_sign_conventions_of_unmeasured_quadratures(gamma7, big_run):
    # x of a P-labelled mode and p of an X-labelled mode are inferred, not measured
    _, est = big_run
    m = est.cm
    for a, b in (("B2X", "B2P"), ("B1X", "B1P"), ("A1X", "A1P")):
        assert m.cov(b, "x", b, "x") == m.cov(a, "x", a, "x")
        assert np.sign(m.cov(a, "x", "A2", "x")) == np.sign(gamma7.cov(a, "x", "A2", "x"))
        assert np.sign(m.cov(b, "p", "A2", "p")) == np.sign(gamma7.cov(b, "p", "A2", "p"))
    assert m.cov("A2", "x", "A2", "p") == 0.0


def test_too_few_shots(gamma7):
    with pytest.raises(InsufficientDataError):
        sp.estimate_cm(sp.sample_shots(gamma7, 99, seed=0))


def test_single_basis_rejected(gamma7):
    shots = sp.sample_shots(gamma7, 200, seed=0)
    shots = replace(shots, a2_is_x=np.ones(200, bool))
    with pytest.raises(InsufficientDataError):
        sp.estimate_cm(shots)


def test_all_zero_outcomes_warn(gamma7):
    shots = sp.sample_shots(gamma7, 200, seed=0)
    shots = replace(shots, outcomes=np.zeros_like(shots.outcomes), a2_value=np.zeros(200))
    with pytest.warns(DegenerateWarning):
        est = sp.estimate_cm(shots)
    assert not np.any(est.cm.matrix)


# --- projection ---------------------------------------------------------------

def test_projection_leaves_physical_estimate_alone(gamma7):
    est = sp.EstimatedCM(gamma7.relabel(HET2M_MODES), np.full((14, 14), 0.01), 1000, 0)
    cm, projected = sp.project_physical(est)
    assert not projected
    assert cm is est.cm


def test_projection_repairs_small_violation(gamma7):
    m = gamma7.relabel(HET2M_MODES).matrix.copy()
    i = gamma7.qindex("B2X", "x")
    m[i, i] -= 0.3
    est = sp.EstimatedCM(CovarianceMatrix(m, HET2M_MODES), np.full((14, 14), 0.2), 1000, 0)
    cm, projected = sp.project_physical(est)
    assert projected
    assert sp._is_physical(cm.matrix)
    assert np.abs(cm.matrix - m).max() <= 5 * 0.2


def test_projection_refuses_large_moves(gamma7):
    from twoway_cvqkd.errors import PhysicalityError

    m = gamma7.relabel(HET2M_MODES).matrix.copy()
    i = gamma7.qindex("B2X", "x")
    m[i, i] = 0.1
    est = sp.EstimatedCM(CovarianceMatrix(m, HET2M_MODES), np.full((14, 14), 1e-3), 1000, 0)
    with pytest.raises(PhysicalityError):
        sp.project_physical(est)


# --- serialization --------------------------------------------------------------

def test_shot_csv_round_trip(gamma7):
    shots = sp.sample_shots(gamma7, 150, seed=42, start=7)
    text = shots.to_csv()
    assert text.splitlines()[0] == ",".join(sp.CSV_COLUMNS)
    back = sp.ShotRecord.from_csv(text)
    np.testing.assert_array_equal(back.outcomes, shots.outcomes)
    np.testing.assert_array_equal(back.a2_is_x, shots.a2_is_x)
    np.testing.assert_array_equal(back.a2_value, shots.a2_value)
    np.testing.assert_array_equal(back.index, shots.index)
    assert back.seed == 42


def test_shot_csv_rejects_bad_header():
    with pytest.raises(ValueError):
        sp.ShotRecord.from_csv("a,b\n1,2\n")


def test_estimate_csv_round_trip(big_run):
    _, est = big_run
    back = sp.EstimatedCM.from_csv(est.to_csv())
    np.testing.assert_array_equal(back.cm.matrix, est.cm.matrix)
    assert (back.n_shots, back.seed) == (est.n_shots, est.seed)


# --- key rate from samples ---------------------------------------------------------

def test_sampled_rate_is_reproducible(gamma7, scen):
    shots = sp.sample_shots(gamma7, 2000, seed=4)
    a = sp.key_rate_from_samples(shots, scen, n_boot=20)
    b = sp.key_rate_from_samples(shots, scen, n_boot=20)
    assert a.as_dict() == b.as_dict()
    np.testing.assert_array_equal(a.boot_K, b.boot_K)


def test_sampled_rate_band_covers_analytic_rate(gamma7, scen, big_run):
    shots, _ = big_run
    r = sp.key_rate_from_samples(shots, scen, n_boot=50)
    lo, hi = r.interval
    assert lo <= key_rate(scen).K_R <= hi
    assert r.sigma > 0
    assert math.isclose(r.k_hat, math.sqrt(scen.ch1.T * scen.ch2.T * scen.T_A), rel_tol=0.05)


def test_estimated_gain_matches_policy_on_exact_cm(gamma7, scen):
    k = sp.estimated_gain(gamma7.relabel(HET2M_MODES), scen)
    assert k == pytest.approx(math.sqrt(scen.ch1.T * scen.ch2.T * scen.T_A), rel=1e-12)


def test_one_way_variant_rejected(gamma7, scen):
    shots = sp.sample_shots(gamma7, 200, seed=0)
    with pytest.raises(DomainError):
        sp.key_rate_from_samples(shots, replace(scen, variant="OneWayHet"), n_boot=2)
