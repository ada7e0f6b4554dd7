"""Covariance matrices, mutual information and Holevo bounds for the protocol family.

Mode names follow the entanglement-based picture: Bob's EPR pair gives B1
(kept) and C1 (sent), Alice's EPR pair gives A1 (kept) and A' (coupled on
her beam splitter), A2 is the beam-splitter output Alice homodynes, B2 is
the mode returning to Bob. A heterodyne detection of mode M is a 50:50
split with vacuum into MX (x measured) and MP (p measured).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import gaussian as gs
from .errors import DegenerateError, DomainError
from .gaussian import CovarianceMatrix

TWO_WAY = ("Het2M", "Hom2M", "HomHetM", "HetHomM")
ONE_WAY = ("OneWayHet", "OneWayHom")
VARIANTS = TWO_WAY + ONE_WAY

HET2M_MODES = ("B2X", "B2P", "B1X", "B1P", "A2", "A1X", "A1P")
EVE_MODES = ("E1", "E1'", "E2", "E2'")

KPolicy = Union[str, float]


@dataclass(frozen=True)
class ChannelParams:
    """Thermal-loss channel: transmittance ``T`` and input-referred excess noise ``eps``."""

    T: float
    eps: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.T <= 1.0:
            raise DomainError(f"channel transmittance T must lie in (0, 1], got {self.T}")
        if not self.eps >= 0.0:
            raise DomainError(f"excess noise eps must be >= 0, got {self.eps}")

    @property
    def chi(self) -> float:
        return self.eps + (1.0 - self.T) / self.T

    @property
    def W(self) -> float:
        return cloner_variance(self)


def cloner_variance(ch: ChannelParams) -> float:
    """EPR variance of the entangling cloner reproducing ``ch``.

    Solves ``T (V + χ) = T V + (1 - T) W``. A unit-transmittance channel has
    no beam splitter to hide behind and returns 1 by convention; its excess
    noise, if any, is injected by a different dilation (see ``_channel``).
    """
    if ch.T == 1.0:
        return 1.0
    return 1.0 + ch.T * ch.eps / (1.0 - ch.T)


@dataclass(frozen=True)
class ProtocolScenario:
    """One point of parameter space for a protocol variant.

    ``k_policy`` is ``"transmittance"`` (Bob's gain equals the channel
    amplitude transmittance, scaled for heterodyne splits), ``"wiener"``
    (gain minimizing Bob's variance) or a number used as a fixed gain.
    One-way variants use ``V`` and ``ch2`` only.
    """

    variant: str
    V: float
    V_A: float = 1.0
    T_A: float = 0.5
    beta: float = 1.0
    ch1: ChannelParams = field(default_factory=lambda: ChannelParams(1.0))
    ch2: ChannelParams = field(default_factory=lambda: ChannelParams(1.0))
    k_policy: KPolicy = "transmittance"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.V >= 1.0:
            raise DomainError(f"V must be >= 1, got {self.V}")
        if not self.V_A >= 1.0:
            raise DomainError(f"V_A must be >= 1, got {self.V_A}")
        if not 0.0 < self.T_A < 1.0:
            raise DomainError(f"T_A must lie in (0, 1), got {self.T_A}")
        if not 0.0 <= self.beta <= 1.0:
            raise DomainError(f"beta must lie in [0, 1], got {self.beta}")
        if isinstance(self.k_policy, str):
            if self.k_policy not in ("transmittance", "wiener"):
                raise DomainError(f"unknown k policy {self.k_policy!r}")
        elif not np.isfinite(self.k_policy):
            raise DomainError(f"fixed gain k must be finite, got {self.k_policy}")

    @property
    def two_way(self) -> bool:
        return self.variant in TWO_WAY


@dataclass(frozen=True)
class RateReport:
    variant: str
    I_BA: float
    S_E: float
    S_E_cond: float
    K_R: float
    k_used: float
    spectrum: np.ndarray
    spectrum_cond: np.ndarray
    beta: float = 1.0

    @property
    def I_BE(self) -> float:
        return self.S_E - self.S_E_cond

    def as_dict(self) -> dict:
        return {
            "variant": self.variant,
            "I_BA": self.I_BA,
            "S_E": self.S_E,
            "S_E_cond": self.S_E_cond,
            "I_BE": self.I_BE,
            "K_R": self.K_R,
            "k_used": self.k_used,
            "beta": self.beta,
            "spectrum": [float(v) for v in self.spectrum],
            "spectrum_cond": [float(v) for v in self.spectrum_cond],
        }


# ---------------------------------------------------------------------------
# state construction


def _bs(g, T, a, b):
    return gs.apply(gs.beam_splitter(T, g.index(a), g.index(b), g.n_modes), g)


def _cnot(g, k, control, target):
    return gs.apply(gs.cnot_gate(k, g.index(control), g.index(target), g.n_modes), g)


def _channel(g: CovarianceMatrix, ch: ChannelParams, signal: str, e: str, e2: str) -> CovarianceMatrix:
    """Send ``signal`` through ``ch``; ``e`` and ``e2`` are Eve's two modes.

    For ``T < 1`` they hold an EPR pair of variance W and ``e`` is mixed with
    the signal on a beam splitter (entangling cloner). For ``T = 1`` they are
    vacua and two C-NOT couplings of gain √ε add noise ε to x and p while
    keeping the global state pure.
    """
    if ch.T < 1.0:
        return _bs(g, ch.T, signal, e)
    if ch.eps == 0.0:
        return g
    s = math.sqrt(ch.eps)
    g = _cnot(g, -s, e, signal)   # x_sig += √ε x_e
    return _cnot(g, s, signal, e2)  # p_sig += √ε p_e2


def _eve_state(ch: ChannelParams, e: str, e2: str) -> CovarianceMatrix:
    if ch.T < 1.0:
        return gs.epr_cm(ch.W, (e, e2))
    return gs.vacuum_cm(2, (e, e2))


def _het_split(g: CovarianceMatrix, mode: str, vac: str) -> CovarianceMatrix:
    g = _bs(g, 0.5, mode, vac)
    labels = list(g.labels)
    labels[g.index(mode)] = mode + "X"
    labels[g.index(vac)] = mode + "P"
    return g.relabel(labels)


def build_prehet(s: ProtocolScenario, keep_eve: bool = False) -> CovarianceMatrix:
    """Pure-channel pipeline up to Bob's detectors: modes B2 B1 A2 A1 (+ Eve)."""
    g = gs.direct_sum(
        [
            gs.epr_cm(s.V, ("B1", "C1")),
            _eve_state(s.ch1, "E1", "E1'"),
            gs.epr_cm(s.V_A, ("A1", "A'")),
            _eve_state(s.ch2, "E2", "E2'"),
        ]
    )
    g = _channel(g, s.ch1, "C1", "E1", "E1'")
    # Alice's coupler: C1 -> A_out = √T_A A_in + √(1-T_A) A', A' -> A2
    g = _bs(g, s.T_A, "C1", "A'")
    g = _channel(g, s.ch2, "C1", "E2", "E2'")
    labels = [{"C1": "B2", "A'": "A2"}.get(lab, lab) for lab in g.labels]
    g = g.relabel(labels)
    order = ["B2", "B1", "A2", "A1"] + (list(EVE_MODES) if keep_eve else [])
    return gs.reduce(g, order)


def build_het2m_constructive(s: ProtocolScenario, keep_eve: bool = False) -> CovarianceMatrix:
    """Seven-mode Het2M covariance matrix assembled from EPR pairs and beam splitters.

    Order ``B2X B2P B1X B1P A2 A1X A1P``; with ``keep_eve`` Eve's four modes
    follow and the eleven-mode state is pure.
    """
    g = build_prehet(s, keep_eve=True)
    g = gs.direct_sum([g, gs.vacuum_cm(3, ("v1", "v2", "v3"))])
    g = _het_split(g, "B2", "v1")
    g = _het_split(g, "B1", "v2")
    g = _het_split(g, "A1", "v3")
    order = list(HET2M_MODES) + (list(EVE_MODES) if keep_eve else [])
    return gs.reduce(g, order)


def build_het2m_closed_form(s: ProtocolScenario) -> CovarianceMatrix:
    """Seven-mode Het2M covariance matrix filled in from the analytic block entries."""
    V, VA, TA = s.V, s.V_A, s.T_A
    T1, T2, chi1, chi2 = s.ch1.T, s.ch2.T, s.ch1.chi, s.ch2.chi
    I, Z = np.eye(2), gs.SIGMA_Z
    O = np.zeros((2, 2))

    gB2 = 0.5 * (1 + T2 * (VA - TA * VA + T1 * TA * (V + chi1) + chi2)) * I
    gA2 = (TA * VA + T1 * (1 - TA) * (V + chi1)) * I
    C1 = 0.5 * math.sqrt(T1 * T2 * TA * (V * V - 1)) * Z
    C2 = math.sqrt(0.5 * T2 * (1 - TA) * TA) * (VA - T1 * (V + chi1)) * I
    C3 = 0.5 * math.sqrt(T2 * (1 - TA) * (VA * VA - 1)) * Z
    C4 = -math.sqrt(0.5 * T1 * (1 - TA) * (V * V - 1)) * Z
    C5 = math.sqrt(0.5 * TA * (VA * VA - 1)) * Z
    bp, bm = 0.5 * (1 + V) * I, 0.5 * (1 - V) * I
    ap, am = 0.5 * (1 + VA) * I, 0.5 * (1 - VA) * I

    m = np.block(
        [
            [gB2, I - gB2, C1, -C1, C2, C3, -C3],
            [I - gB2, gB2, -C1, C1, -C2, -C3, C3],
            [C1, -C1, bp, bm, C4, O, O],
            [-C1, C1, bm, bp, -C4, O, O],
            [C2, -C2, C4, -C4, gA2, C5, -C5],
            [C3, -C3, O, O, C5, ap, am],
            [-C3, C3, O, O, -C5, am, ap],
        ]
    )
    return CovarianceMatrix(m, HET2M_MODES)


# ---------------------------------------------------------------------------
# variants


@dataclass(frozen=True)
class _Plan:
    unsplit: tuple[str, ...]                   # heterodyne pairs folded back to one mode
    gates: tuple[tuple[str, str], ...]         # (target, control) of each Γ_k
    measured: tuple[tuple[str, str], ...]      # (mode, quadrature) Bob reads out
    alice: tuple[tuple[str, str], ...]         # Alice's key variable for each measured one
    rename: dict


_PLANS = {
    "Het2M": _Plan(
        (),
        (("B2X", "B1X"), ("B1P", "B2P")),
        (("B2X", "x"), ("B2P", "p")),
        (("A1X", "x"), ("A1P", "p")),
        {"B2X": "B4", "B1X": "B3", "B2P": "B6", "B1P": "B5"},
    ),
    "Hom2M": _Plan(("B2", "B1"), (("B2", "B1"),), (("B2", "x"),), (("A1X", "x"),), {"B2": "B4", "B1": "B3"}),
    "HomHetM": _Plan(("B1",), (("B2X", "B1"),), (("B2X", "x"),), (("A1X", "x"),), {"B2X": "B4", "B1": "B3"}),
    "HetHomM": _Plan(("B2",), (("B2", "B1X"),), (("B2", "x"),), (("A1X", "x"),), {"B2": "B4", "B1X": "B3"}),
}


def _unsplit(g: CovarianceMatrix, mode: str) -> CovarianceMatrix:
    """Undo the heterodyne split of ``mode`` and drop the recovered vacuum."""
    a, b = g.index(mode + "X"), g.index(mode + "P")
    g = gs.apply(gs.beam_splitter(0.5, a, b, g.n_modes).T, g)
    labels = list(g.labels)
    labels[a], labels[b] = mode, "_vac"
    g = g.relabel(labels)
    return gs.reduce(g, [lab for lab in g.labels if lab != "_vac"])


def variant_cm(gamma7: CovarianceMatrix, variant: str) -> CovarianceMatrix:
    """Alice-Bob state seen by ``variant`` before Bob's post-processing."""
    plan = _PLANS[variant]
    g = gamma7
    for mode in plan.unsplit:
        g = _unsplit(g, mode)
    return g


def transmittance_gain(s: ProtocolScenario) -> float:
    """Amplitude transmittance from B1's partner to B2, rescaled by the detector splits.

    With this gain Bob's combination cancels the returning copy of his own
    EPR half to the same order as the closed-form mutual information.
    """
    t = s.ch1.T * s.ch2.T * s.T_A
    het_b2 = s.variant in ("Het2M", "HomHetM")
    het_b1 = s.variant in ("Het2M", "HetHomM")
    return math.sqrt(t * (0.5 if het_b2 else 1.0) / (0.5 if het_b1 else 1.0))


def estimator_gain(gamma, policy: KPolicy = "wiener", variant: str = "Het2M", scenario: ProtocolScenario | None = None) -> float:
    """Bob's gain k in ``x_B = x_B2 - k x_B1``.

    ``"wiener"`` returns ``Cov(x_B2, x_B1) / Var(x_B1)`` from ``gamma`` (the
    variant's pre-processing state); ``"transmittance"`` needs ``scenario``.
    """
    if not isinstance(policy, str):
        return float(policy)
    if policy == "transmittance":
        if scenario is None:
            raise ValueError("the transmittance gain needs the scenario's channel parameters")
        return transmittance_gain(scenario)
    if policy != "wiener":
        raise DomainError(f"unknown k policy {policy!r}")
    g = gs.as_cm(gamma)
    target, control = _PLANS[variant].gates[0]
    var = g.cov(control, "x", control, "x")
    if var < 1e-12:
        raise DegenerateError(f"Var(x_{control}) = {var:.3g} too small for a Wiener gain")
    return g.cov(target, "x", control, "x") / var


def postprocess(gamma_variant: CovarianceMatrix, variant: str, k: float) -> CovarianceMatrix:
    """Apply Bob's C-NOT gates and rename the outputs (B4 carries x_B, B6 carries p_B)."""
    plan = _PLANS[variant]
    g = gamma_variant
    for target, control in plan.gates:
        g = _cnot(g, k, control, target)
    return g.relabel([plan.rename.get(lab, lab) for lab in g.labels])


def bob_postprocess(gamma7: CovarianceMatrix, k: float) -> CovarianceMatrix:
    """Het2M post-processing; output order ``B4 B3 B6 B5 A2 A1X A1P``."""
    g = postprocess(gs.as_cm(gamma7).relabel(HET2M_MODES), "Het2M", k)
    return gs.reorder(g, ["B4", "B3", "B6", "B5", "A2", "A1X", "A1P"])


def _bob_measured(variant: str) -> list[tuple[str, str]]:
    plan = _PLANS[variant]
    return [(plan.rename.get(m, m), q) for m, q in plan.measured]


def gaussian_mutual_info(gamma, a: Sequence[tuple[str, str]], b: Sequence[tuple[str, str]]) -> float:
    """Mutual information (bits) between two sets of jointly Gaussian quadratures."""
    g = gs.as_cm(gamma)
    ia = [g.qindex(m, q) for m, q in a]
    ib = [g.qindex(m, q) for m, q in b]
    m = g.matrix
    det_a = np.linalg.det(m[np.ix_(ia, ia)])
    det_b = np.linalg.det(m[np.ix_(ib, ib)])
    iab = ia + ib
    det_ab = np.linalg.det(m[np.ix_(iab, iab)])
    return 0.5 * math.log2(det_a * det_b / det_ab)


def mutual_info_cm(gamma_ab: CovarianceMatrix, variant: str) -> float:
    """``I_BA`` from the post-processed state: Alice's heterodyne data vs Bob's key data."""
    return gaussian_mutual_info(gamma_ab, _PLANS[variant].alice, _bob_measured(variant))


def _F(s: ProtocolScenario) -> float:
    return 2 * s.V - 2 * math.sqrt(s.V * s.V - 1) + s.ch1.chi


def mutual_info_het2m(s: ProtocolScenario) -> float:
    T1, T2, TA, VA, chi2 = s.ch1.T, s.ch2.T, s.T_A, s.V_A, s.ch2.chi
    common = 1 + T1 * T2 * TA * (1 + _F(s))
    return math.log2((common + T2 * (VA - TA * VA + chi2)) / (common + T2 * (1 - TA + chi2)))


def mutual_info_variant(s: ProtocolScenario) -> float:
    """Closed-form ``I_BA`` for Hom2M, HomHetM and HetHomM (one quadrature each)."""
    T1, T2, TA, VA, chi2, F = s.ch1.T, s.ch2.T, s.T_A, s.V_A, s.ch2.chi, _F(s)
    if s.variant == "Hom2M":
        num = VA - TA * VA + TA * T1 * F + chi2
        den = 1 - TA + TA * T1 * F + chi2
    elif s.variant == "HomHetM":
        num = 1 + T1 * T2 * TA * F + T2 * (VA - TA * VA + chi2)
        den = 1 + T1 * T2 * TA * F + T2 * (1 - TA + chi2)
    elif s.variant == "HetHomM":
        num = VA - TA * VA + TA * T1 * (1 + F) + chi2
        den = 1 - TA + TA * T1 * (1 + F) + chi2
    else:
        raise DomainError(f"no single-quadrature formula for {s.variant}")
    return 0.5 * math.log2(num / den)


def mutual_info_closed_form(s: ProtocolScenario) -> float:
    return mutual_info_het2m(s) if s.variant == "Het2M" else mutual_info_variant(s)


# ---------------------------------------------------------------------------
# Holevo bound


def _fold_heterodyne(g: CovarianceMatrix) -> CovarianceMatrix:
    """Fold every intact ``MX``/``MP`` pair back to ``M`` (their vacuum carries no entropy)."""
    for lab in list(g.labels):
        if lab.endswith("X") and lab[:-1] + "P" in g.labels:
            g = _unsplit(g, lab[:-1])
    return g


def _spectrum(g: CovarianceMatrix, method: str) -> np.ndarray:
    """Spectrum of ``g``; the quartic route folds heterodyne pairs down to four modes first."""
    if method == "generic":
        return gs.symplectic_spectrum_generic(g).eigenvalues
    if method != "quartic":
        raise ValueError(f"unknown spectrum method {method!r}")
    core = _fold_heterodyne(g)
    if core.n_modes > 4:
        raise ValueError(f"quartic route needs at most 4 modes after folding, got {core.n_modes}")
    pad = 4 - core.n_modes
    if pad:
        core = gs.direct_sum([core, gs.vacuum_cm(pad, [f"_pad{i}" for i in range(pad)])])
    lam = gs.symplectic_spectrum_quartic(gs.symplectic_invariants(core)).eigenvalues
    # folded vacua and padding modes each contribute one unit eigenvalue
    lam = np.sort(lam)[::-1][: 4 - pad]
    return np.concatenate([lam, np.ones(g.n_modes - len(lam))])


def conditional_state(gamma_ab: CovarianceMatrix, variant: str) -> CovarianceMatrix:
    g = gamma_ab
    for mode, q in _bob_measured(variant):
        g = gs.condition_on_homodyne(g, mode, q)
    return g


def holevo_bound(gamma_ab: CovarianceMatrix, variant: str, k: float, method: str = "generic"):
    """``(S_E, S_E_cond, spectrum, spectrum_cond)`` for a post-processed state.

    ``S_E`` is the entropy of the Alice-Bob state (Eve purifies it). With the
    quartic method the C-NOTs are undone first so the heterodyne vacua can be
    folded away, leaving the four physical modes B2 B1 A2 A1.
    """
    if method == "quartic":
        plan = _PLANS[variant]
        inverse = {v: k_ for k_, v in plan.rename.items()}
        g = gamma_ab.relabel([inverse.get(lab, lab) for lab in gamma_ab.labels])
        for target, control in reversed(plan.gates):
            g = _cnot(g, -k, control, target)
        lam = _spectrum(g, method)
    else:
        lam = _spectrum(gamma_ab, method)
    cond = conditional_state(gamma_ab, variant)
    lam_c = _spectrum(cond, method)
    S_E = float(np.sum(gs.g_function(lam)))
    S_c = float(np.sum(gs.g_function(lam_c)))
    return S_E, S_c, lam, lam_c


def holevo_bound_het2m(gamma_ab: CovarianceMatrix, k: float, method: str = "generic"):
    """``(S_E, S_E_cond, I_BE)`` for the Het2M state in ``B4 B3 B6 B5 A2 A1X A1P`` order."""
    S_E, S_c, _, _ = holevo_bound(gamma_ab, "Het2M", k, method)
    return S_E, S_c, S_E - S_c


def holevo_bound_variant(s: ProtocolScenario, method: str = "generic") -> float:
    """``I_BE`` for ``s.variant`` computed from its own post-processed state."""
    r = key_rate(s, method=method)
    return r.I_BE


# ---------------------------------------------------------------------------
# one-way baselines


def one_way_state(variant: str, V: float, ch: ChannelParams, alice: str = "heterodyne") -> CovarianceMatrix:
    """Entanglement-based one-way state after Bob's detector split (if any)."""
    g = gs.direct_sum([gs.epr_cm(V, ("A", "B")), _eve_state(ch, "E", "E'")])
    g = _channel(g, ch, "B", "E", "E'")
    g = gs.reduce(g, ["A", "B"])
    if alice == "heterodyne":
        g = _het_split(gs.direct_sum([g, gs.vacuum_cm(1, ("va",))]), "A", "va")
    elif alice != "homodyne":
        raise DomainError(f"alice detection must be 'heterodyne' or 'homodyne', got {alice!r}")
    if variant == "OneWayHet":
        g = _het_split(gs.direct_sum([g, gs.vacuum_cm(1, ("vb",))]), "B", "vb")
    elif variant != "OneWayHom":
        raise DomainError(f"not a one-way variant: {variant!r}")
    return g


def one_way_rate(variant: str, V: float, ch: ChannelParams, beta: float, alice: str = "heterodyne", method: str = "generic") -> RateReport:
    """Reverse-reconciliation key rate of the one-way Hom/Het baselines."""
    g = one_way_state(variant, V, ch, alice)
    bob = [("B", "x")] if variant == "OneWayHom" else [("BX", "x"), ("BP", "p")]
    al = [("AX", "x"), ("AP", "p")] if alice == "heterodyne" else [("A", "x")]
    I_BA = gaussian_mutual_info(g, al, bob)
    lam = _spectrum(g, method)
    cond = g
    for mode, q in bob:
        cond = gs.condition_on_homodyne(cond, mode, q)
    lam_c = _spectrum(cond, method)
    S_E = float(np.sum(gs.g_function(lam)))
    S_c = float(np.sum(gs.g_function(lam_c)))
    return RateReport(variant, I_BA, S_E, S_c, beta * I_BA - (S_E - S_c), float("nan"), lam, lam_c, beta)


# ---------------------------------------------------------------------------


def key_rate(s: ProtocolScenario, method: str = "generic", gamma7: CovarianceMatrix | None = None) -> RateReport:
    """Reverse-reconciliation key rate ``β I_BA - I_BE`` for any variant.

    ``I_BA`` is evaluated on the same post-processed state as ``I_BE`` so
    both use the gain actually chosen; with the default transmittance gain
    it coincides with the closed-form expressions. ``gamma7`` overrides the
    analytic Het2M state (used for estimated matrices).
    """
    if not s.two_way:
        return one_way_rate(s.variant, s.V, s.ch2, s.beta, method=method)
    g7 = build_het2m_closed_form(s) if gamma7 is None else gamma7
    gv = variant_cm(g7, s.variant)
    k = estimator_gain(gv, s.k_policy, s.variant, s)
    gab = postprocess(gv, s.variant, k)
    I_BA = mutual_info_cm(gab, s.variant)
    S_E, S_c, lam, lam_c = holevo_bound(gab, s.variant, k, method)
    return RateReport(s.variant, I_BA, S_E, S_c, s.beta * I_BA - (S_E - S_c), k, lam, lam_c, s.beta)
