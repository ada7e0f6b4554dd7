"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import itertools
import time

import numpy as np
import pytest

from twoway_cvqkd import gaussian as gs
from twoway_cvqkd import protocols as pr
from twoway_cvqkd import sampler as sp
from twoway_cvqkd.analysis import Settings, max_distance, rate, tolerable_epsilon

from conftest import BASELINE, random_physical_cm


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def scen(variant="Het2M", V=100.0, V_A=100.0, T_A=0.8, beta=0.99, T1=1.0, T2=1.0, eps=0.0, k_policy="transmittance"):
    return pr.ProtocolScenario(
        variant, V, V_A, T_A, beta, pr.ChannelParams(T1, eps), pr.ChannelParams(T2, eps), k_policy
    )


# V = V_A, T_A, T1, T2, eps: 4 * 3 * 3 * 3 * 3 = 324 points
GRID = [
    scen(V=V, V_A=V, T_A=TA, T1=T1, T2=T2, eps=e)
    for V, TA, T1, T2, e in itertools.product((1, 2, 20, 100), (0.3, 0.5, 0.8), (0.2, 0.7, 1.0), (0.2, 0.7, 1.0), (0, 0.1, 0.4))
]


def test_1_closed_form_equals_constructive(report):
    assert len(GRID) == 324
    t0 = time.perf_counter()
    worst = 0.0
    for s in GRID:
        a = pr.build_het2m_closed_form(s).matrix
        b = pr.build_het2m_constructive(s).matrix
        worst = max(worst, float(np.abs(a - b).max()))
    dt = time.perf_counter() - t0
    report(1, worst < 1e-10 and dt < 5, f"max |closed - constructive| = {worst:.2e} on 324 points in {dt:.2f} s")


def test_2_quartic_matches_generic(report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        m, _ = random_physical_cm(rng, 4)
        a = gs.symplectic_spectrum_generic(m).eigenvalues
        b = gs.symplectic_spectrum(m, method="quartic").eigenvalues
        worst = max(worst, float(np.max(np.abs(a - b) / a)))
    dt = time.perf_counter() - t0
    report(2, worst < 1e-8 and dt < 10, f"max relative eigenvalue gap = {worst:.2e} on 1000 matrices in {dt:.2f} s")


def test_3_global_purity_and_purification(report):
    worst_lam = worst_s = 0.0
    for s in GRID:
        g = pr.build_het2m_constructive(s, keep_eve=True)
        lam = gs.symplectic_spectrum_generic(g).eigenvalues
        worst_lam = max(worst_lam, float(np.abs(lam - 1).max()))
        s_ab = gs.von_neumann_entropy(gs.reduce(g, pr.HET2M_MODES))
        s_e = gs.von_neumann_entropy(gs.reduce(g, pr.EVE_MODES))
        worst_s = max(worst_s, abs(s_ab - s_e))
    ok = worst_lam < 1e-8 and worst_s < 1e-8
    report(3, ok, f"max |lambda - 1| = {worst_lam:.2e}, max |S(AB) - S(E)| = {worst_s:.2e}")


def test_4_postprocessing_keeps_entropy(report):
    g7 = pr.build_het2m_closed_form(Settings(**BASELINE, distance_km=20.0).scenario("Het2M"))
    before = gs.von_neumann_entropy(g7)
    gaps = {k: abs(gs.von_neumann_entropy(pr.bob_postprocess(g7, k)) - before) for k in (0.0, 0.3, 1.0, 3.0)}
    worst = max(gaps.values())
    report(4, worst < 1e-10, f"max |S_E after - S_E before| = {worst:.2e} over k in {{0, 0.3, 1, 3}}")


def test_5_tolerable_noise_grows_with_alice_transmittance(report):
    t0 = time.perf_counter()
    table, ok = {}, True
    for d in (10.0, 20.0, 40.0):
        eps = []
        for TA in (0.3, 0.5, 0.8):
            r = tolerable_epsilon("Het2M", Settings(V=1e5, V_A="tied", T_A=TA, beta=0.99, distance_km=d))
            ok &= r.status == "ok"
            eps.append(r.value)
        table[d] = eps
        ok &= bool(np.all(np.diff(eps) > 0))
    dt = time.perf_counter() - t0
    rows = "; ".join(f"{d:g} km: " + ", ".join(f"{e:.6f}" for e in v) for d, v in table.items())
    report(5, ok and dt < 60, f"eps* at T_A = 0.3, 0.5, 0.8 -> {rows} ({dt:.1f} s)")


def test_6_max_distance_ordering(report):
    s = Settings(**BASELINE)
    d = {v: max_distance(v, s) for v in pr.VARIANTS}
    assert all(r.status == "ok" for r in d.values())
    d = {v: r.value for v, r in d.items()}
    others = [d[v] for v in pr.TWO_WAY if v != "HomHetM"]
    ok = all(d["HomHetM"] > x for x in others)
    ok &= min(d[v] for v in pr.TWO_WAY) > max(d[v] for v in pr.ONE_WAY)
    report(6, ok, "d* (km): " + ", ".join(f"{v}={x:.3f}" for v, x in d.items()))


def test_7_cm_mutual_information_matches_closed_form(report):
    # V = V_A, T_A, T1 = T2 at eps = 0.1: 3 * 3 * 3 = 27 points per variant
    points = list(itertools.product((2.0, 20.0, 100.0), (0.3, 0.5, 0.8), (0.2, 0.7, 1.0)))
    assert len(points) == 27
    worst = {"transmittance": 0.0, "wiener": 0.0}
    for variant in pr.TWO_WAY:
        for V, TA, T in points:
            for policy in worst:
                s = scen(variant, V=V, V_A=V, T_A=TA, T1=T, T2=T, eps=0.1, k_policy=policy)
                gap = abs(pr.key_rate(s).I_BA - pr.mutual_info_closed_form(s))
                worst[policy] = max(worst[policy], gap)
    ok = worst["transmittance"] < 1e-8
    report(
        7,
        ok,
        f"max |I_BA(CM) - I_BA(closed)|: transmittance k = {worst['transmittance']:.2e}, "
        f"wiener k = {worst['wiener']:.2e} (documented rule: transmittance)",
    )


def test_8_rate_monotone_in_efficiency_and_noise(report):
    base = Settings(V=20, V_A=20, T_A=0.8, beta=0.9, eps=0.1)
    checked, ok = 0, True
    for variant in pr.TWO_WAY:
        for d in np.arange(0.0, 80.0, 2.0):
            s = base.with_axis("distance_km", d)
            K_beta = [rate(variant, s.with_axis("beta", b)) for b in (0.7, 0.8, 0.9, 1.0)]
            if min(K_beta) > 0:
                checked += 1
                ok &= bool(np.all(np.diff(K_beta) > 0))
            K_eps = [rate(variant, s.with_axis("epsilon", e)) for e in (0.05, 0.1, 0.2, 0.4)]
            if min(K_eps) > 0:
                checked += 1
                ok &= bool(np.all(np.diff(K_eps) < 0))
    report(8, ok and checked > 0, f"{checked} positive-rate (variant, distance) comparisons checked")


def test_9_sampler_converges(report):
    t0 = time.perf_counter()
    s = Settings(**BASELINE, distance_km=20.0).scenario("Het2M")
    g7 = pr.build_het2m_closed_form(s)
    truth = g7.matrix
    i, j = g7.qindex("A2", "x"), g7.qindex("A2", "p")
    mask = np.ones(truth.shape, bool)
    mask[i, j] = mask[j, i] = False
    ns = [10**3, 10**4, 10**5, 10**6]
    errors = []
    shots = None
    for n in ns:
        shots = sp.sample_shots(g7, n, seed=2024)
        est = sp.estimate_cm(shots)
        errors.append(float(np.sqrt(np.mean((est.cm.matrix - truth)[mask] ** 2))))
    slope = float(np.polyfit(np.log10(ns), np.log10(errors), 1)[0])
    result = sp.key_rate_from_samples(shots, s)
    lo, hi = result.interval
    K = pr.key_rate(s).K_R
    dt = time.perf_counter() - t0
    ok = lo <= K <= hi and -0.6 <= slope <= -0.4 and dt < 120
    report(
        9,
        ok,
        f"K_R = {K:.5f} in [{lo:.4f}, {hi:.4f}] (n = 1e6, 3 sigma); "
        f"entry RMS error slope = {slope:.3f}; {dt:.1f} s",
    )


def test_10_trivial_limits(report):
    worst_be = worst_k = worst_ba = 0.0
    for variant in pr.VARIANTS:
        r = pr.key_rate(scen(variant, V=50.0, V_A=50.0, T_A=0.6, beta=0.9))
        worst_be = max(worst_be, abs(r.I_BE))
        worst_k = max(worst_k, abs(r.K_R - 0.9 * r.I_BA))
    for variant in pr.TWO_WAY:
        r = pr.key_rate(scen(variant, V=50.0, V_A=1.0, T_A=0.6, T1=0.5, T2=0.5, eps=0.1))
        worst_ba = max(worst_ba, abs(r.I_BA))
    ok = worst_be < 1e-9 and worst_k < 1e-9 and worst_ba < 1e-12
    report(10, ok, f"max I_BE = {worst_be:.1e}, max |K_R - beta I_BA| = {worst_k:.1e}, max I_BA(V_A=1) = {worst_ba:.1e}")
