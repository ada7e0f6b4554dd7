"""Shot-level emulation of the Het2M measurement record and covariance estimation.

Each shot records Bob's four heterodyne outcomes, Alice's heterodyne
outcomes on A1 and one randomly chosen quadrature of A2. Random numbers come
from a Philox counter stream keyed by the seed; shot ``i`` consumes counter
blocks ``3i .. 3i+2``, so any slice of shots can be regenerated on its own.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from . import gaussian as gs
from .errors import (
    DegenerateWarning,
    DomainError,
    FactorizationError,
    InsufficientDataError,
    PhysicalityError,
)
from .gaussian import CovarianceMatrix
from .protocols import (
    HET2M_MODES,
    ProtocolScenario,
    RateReport,
    estimator_gain,
    key_rate,
    variant_cm,
)

OUTCOME_COLUMNS = ("x_B2X", "p_B2P", "x_B1X", "p_B1P", "x_A1X", "p_A1P")
CSV_COLUMNS = ("shot", "seed") + OUTCOME_COLUMNS + ("A2_basis", "A2_value")
MIN_SHOTS = 100
PSD_TOL = 1e-10
PROJECTION_MAX_SE = 5.0
N_BOOTSTRAP = 200

_BLOCKS_PER_SHOT = 3  # 12 raw words: 8 normals, 1 coin, 3 spare
_CHUNK = 1 << 17
_BOOT_DOMAIN = 0xB0075

# (mode, quadrature) of the 8 sampled variables; A2 is drawn in both bases
_SAMPLED = (("B2X", "x"), ("B2P", "p"), ("B1X", "x"), ("B1P", "p"), ("A1X", "x"), ("A1P", "p"), ("A2", "x"), ("A2", "p"))
_PAIRS = (("B2X", "B2P", 0, 1), ("B1X", "B1P", 2, 3), ("A1X", "A1P", 4, 5))


@dataclass(frozen=True)
class ShotRecord:
    """Columnar shot record.

    ``outcomes`` has one column per entry of ``OUTCOME_COLUMNS``;
    ``a2_is_x`` holds Alice's basis choice for A2 and ``a2_value`` its outcome.
    """

    outcomes: np.ndarray
    a2_is_x: np.ndarray
    a2_value: np.ndarray
    index: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.index)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(len(self)):
            w.writerow(
                [int(self.index[i]), self.seed]
                + [repr(float(v)) for v in self.outcomes[i]]
                + ["x" if self.a2_is_x[i] else "p", repr(float(self.a2_value[i]))]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ShotRecord":
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected shot CSV header {header}")
        rows = [r for r in reader if r]
        if not rows:
            return cls(np.zeros((0, 6)), np.zeros(0, bool), np.zeros(0), np.zeros(0, np.int64), 0)
        seeds = {r[1] for r in rows}
        if len(seeds) != 1:
            raise ValueError("shot CSV mixes several seeds")
        basis = [r[8] for r in rows]
        if not set(basis) <= {"x", "p"}:
            raise ValueError("A2_basis must be 'x' or 'p'")
        return cls(
            np.array([r[2:8] for r in rows], dtype=float),
            np.array(basis) == "x",
            np.array([r[9] for r in rows], dtype=float),
            np.array([r[0] for r in rows], dtype=np.int64),
            int(seeds.pop()),
        )


def _factor(gamma8: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(gamma8)
    if w.min() < -PSD_TOL * max(1.0, float(np.abs(w).max())):
        raise FactorizationError(f"covariance matrix is not positive semidefinite (eigenvalue {w.min():.3g})")
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def _draw(seed: int, start: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Standard normals ``(count, 8)`` and fair coins for shots ``start .. start+count-1``."""
    bg = np.random.Philox(key=seed)
    bg.advance(_BLOCKS_PER_SHOT * start)
    raw = bg.random_raw(4 * _BLOCKS_PER_SHOT * count).reshape(count, 4 * _BLOCKS_PER_SHOT)
    u = ((raw[:, :8] >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    return ndtri(u), (raw[:, 8] >> np.uint64(63)).astype(bool)


def sample_shots(gamma7, n: int, seed: int, start: int = 0) -> ShotRecord:
    """Draw shots ``start .. start+n-1`` from the 7-mode Het2M covariance matrix.

    The result is a pure function of ``(gamma7, seed, shot index)``:
    ``sample_shots(g, n, s, start=m)`` equals rows ``m..m+n-1`` of a longer run.
    """
    if n < 1:
        raise DomainError(f"number of shots must be >= 1, got {n}")
    if not 0 <= seed < 2**128:
        raise DomainError(f"seed must lie in [0, 2**128), got {seed}")
    g = gs.as_cm(gamma7)
    if g.n_modes != 7:
        raise DomainError(f"expected a 7-mode covariance matrix, got {g.n_modes} modes")
    g = g.relabel(HET2M_MODES)
    idx = [g.qindex(m, q) for m, q in _SAMPLED]
    F = _factor(g.matrix[np.ix_(idx, idx)])
    out = np.empty((n, 8))
    coin = np.empty(n, dtype=bool)
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        z, c = _draw(seed, start + lo, hi - lo)
        out[lo:hi] = z @ F
        coin[lo:hi] = c
    a2 = np.where(coin, out[:, 6], out[:, 7])
    return ShotRecord(out[:, :6], coin, a2, np.arange(start, start + n, dtype=np.int64), seed)


@dataclass(frozen=True)
class EstimatedCM:
    """Estimated 7-mode Het2M covariance matrix with per-entry standard errors."""

    cm: CovarianceMatrix
    stderr: np.ndarray
    n_shots: int
    seed: int

    def to_csv(self) -> str:
        meta = json.dumps({"n_shots": self.n_shots, "seed": self.seed})
        return f"# {meta}\n" + self.cm.to_csv()

    @classmethod
    def from_csv(cls, text: str) -> "EstimatedCM":
        first, rest = text.split("\n", 1)
        meta = json.loads(first.lstrip("# "))
        cm = CovarianceMatrix.from_csv(rest)
        return cls(cm, np.full(cm.matrix.shape, np.nan), int(meta["n_shots"]), int(meta["seed"]))


def _design(shots: ShotRecord) -> np.ndarray:
    """Columns of the 8 moment variables; A2 columns are zero on the other basis."""
    Z = np.zeros((len(shots), 8))
    Z[:, :6] = shots.outcomes
    Z[:, 6] = np.where(shots.a2_is_x, shots.a2_value, 0.0)
    Z[:, 7] = np.where(shots.a2_is_x, 0.0, shots.a2_value)
    return Z


def _denominators(n: float, n_x: float, n_p: float) -> np.ndarray:
    D = np.full((8, 8), float(n))
    D[6, :] = D[:, 6] = n_x
    D[7, :] = D[:, 7] = n_p
    D[6, 7] = D[7, 6] = np.inf  # never measured together
    return D


def _sign_map() -> tuple[np.ndarray, np.ndarray]:
    """Linear map from the 8 measured moments to the 14 quadratures, plus vacuum offsets.

    The split partner of a measured quadrature is the measured one reflected
    (``x_PP = -x_PX``, ``p_PX = -p_PP``) up to independent vacuum noise; the
    offsets restore the vacuum term in the pair's cross covariances.
    """
    g = CovarianceMatrix(np.eye(14), HET2M_MODES)
    M = np.zeros((14, 8))
    C = np.zeros((14, 14))
    for mx, mp, a, b in _PAIRS:
        M[g.qindex(mx, "x"), a] = 1.0
        M[g.qindex(mp, "x"), a] = -1.0
        M[g.qindex(mx, "p"), b] = -1.0
        M[g.qindex(mp, "p"), b] = 1.0
        for q in "xp":
            i, j = g.qindex(mx, q), g.qindex(mp, q)
            C[i, j] = C[j, i] = 1.0
    M[g.qindex("A2", "x"), 6] = 1.0
    M[g.qindex("A2", "p"), 7] = 1.0
    return M, C


_M, _C = _sign_map()


def _weighted_moments(Z: np.ndarray, w: np.ndarray, basis_x: np.ndarray) -> np.ndarray:
    n = w.sum()
    n_x = w[basis_x].sum()
    S = Z.T @ (Z * w[:, None])
    return S / _denominators(n, n_x, n - n_x)


def _assemble(sigma: np.ndarray) -> np.ndarray:
    return _M @ sigma @ _M.T + _C


def estimate_cm(shots: ShotRecord) -> EstimatedCM:
    """Second-moment estimate of the 7-mode Het2M covariance matrix.

    Means are taken as zero. A2 moments use only shots measured in the
    matching basis; ``Cov(x_A2, p_A2)`` is never observed and is set to 0.
    """
    n = len(shots)
    if n < MIN_SHOTS:
        raise InsufficientDataError(f"need at least {MIN_SHOTS} shots, got {n}")
    n_x = int(shots.a2_is_x.sum())
    if n_x == 0 or n_x == n:
        raise InsufficientDataError("A2 was measured in only one basis")
    Z = _design(shots)
    if not np.any(Z):
        warnings.warn("all recorded outcomes are zero; returning a zero matrix", DegenerateWarning, stacklevel=2)
        zero = np.zeros((14, 14))
        return EstimatedCM(CovarianceMatrix(zero, HET2M_MODES), zero, n, shots.seed)
    D = _denominators(n, n_x, n - n_x)
    sigma = (Z.T @ Z) / D
    Z2 = Z * Z
    var = np.clip((Z2.T @ Z2) / D - sigma**2, 0.0, None)
    se = np.sqrt(var / D)
    se[6, 7] = se[7, 6] = math.sqrt(sigma[6, 6] * sigma[7, 7] / min(n_x, n - n_x))
    gamma = _assemble(sigma)
    stderr = np.abs(_M) @ se @ np.abs(_M).T  # each entry draws on exactly one moment
    return EstimatedCM(CovarianceMatrix(gamma, HET2M_MODES), stderr, n, shots.seed)


def _clip_spectrum(gamma: np.ndarray) -> np.ndarray:
    # a physical CM has λ_min(Γ) λ_max(Γ) >= 1; floor the ordinary spectrum there
    # first so the Williamson form exists, then lift symplectic eigenvalues to 1
    w, U = np.linalg.eigh(gamma)
    if w.max() <= 0:
        raise PhysicalityError("estimated covariance matrix has no positive eigenvalue")
    floor = 1.0 / w.max()
    if w.min() < floor:
        gamma = (U * np.maximum(w, floor)) @ U.T
    lam, S = gs.williamson(gamma)
    return S @ np.diag(np.repeat(np.maximum(lam, 1.0), 2)) @ S.T


def _is_physical(gamma: np.ndarray) -> bool:
    try:
        gs.symplectic_spectrum_generic(gamma)
    except PhysicalityError:
        return False
    return bool(np.linalg.eigvalsh(gamma).min() > 0)


def _inflate(gamma: np.ndarray, stderr: np.ndarray) -> np.ndarray:
    """Raise each variance by the same number ``t`` of its standard errors, ``t`` minimal.

    ``Γ + t D + iΩ >= 0`` with ``D = diag(σ_ii)`` holds exactly when ``t`` is at
    least minus the smallest eigenvalue of ``D^-½ (Γ + iΩ) D^-½``.
    """
    d = np.diag(stderr).copy()
    d[d <= 0] = 1.0
    r = 1.0 / np.sqrt(d)
    h = (gamma + 1j * gs.omega(gamma.shape[0] // 2)) * np.outer(r, r)
    t = max(0.0, -float(np.linalg.eigvalsh(h)[0]))
    for margin in (1e-12, 1e-9, 1e-6):
        fixed = gamma + np.diag(d * (t * (1.0 + margin) + margin))
        if _is_physical(fixed):
            return fixed
    raise PhysicalityError("variance inflation did not reach a physical matrix")


def _project(gamma: np.ndarray, stderr: np.ndarray, check: bool) -> tuple[np.ndarray, bool]:
    if _is_physical(gamma):
        return gamma, False
    limit = PROJECTION_MAX_SE * stderr
    fixed = _clip_spectrum(gamma)
    if np.any(np.abs(fixed - gamma) > limit):
        fixed = _inflate(gamma, stderr)
    moved = np.abs(fixed - gamma)
    if check and np.any(moved > limit):
        i, j = np.unravel_index(np.argmax(moved - limit), moved.shape)
        raise PhysicalityError(
            f"projection moves entry ({i}, {j}) by {moved[i, j]:.3g}, "
            f"more than {PROJECTION_MAX_SE:g} standard errors ({stderr[i, j]:.3g})"
        )
    return fixed, True


def project_physical(est: EstimatedCM) -> tuple[CovarianceMatrix, bool]:
    """Physical matrix near the estimate; returns ``(cm, projected)``.

    Physical inputs come back unchanged. Otherwise symplectic eigenvalues
    below 1 are lifted to 1 in the Williamson normal form. If that moves some
    entry by more than five standard errors (typical for nearly pure,
    strongly correlated states, whose normal form is ill-conditioned) the
    variances are inflated instead by the smallest common multiple of their
    standard errors that restores physicality. Raises PhysicalityError if the
    chosen correction still moves an entry beyond the bound.
    """
    fixed, projected = _project(est.cm.matrix, est.stderr, check=True)
    return (CovarianceMatrix(fixed, HET2M_MODES), True) if projected else (est.cm, False)


def estimated_gain(gamma7: CovarianceMatrix, s: ProtocolScenario) -> float:
    """Bob's gain computed from estimated moments and his own source variance.

    The transmittance policy reads ``√(T1 T2 T_A)`` off the B2X-B1X
    correlation, which equals it times ``√(V² - 1) / 2``.
    """
    if not isinstance(s.k_policy, str):
        return float(s.k_policy)
    gv = variant_cm(gamma7, s.variant)
    if s.k_policy == "wiener":
        return estimator_gain(gv, "wiener", s.variant)
    if s.V <= 1.0:
        raise DomainError("the transmittance gain needs V > 1")
    t = max(2.0 * gamma7.cov("B2X", "x", "B1X", "x") / math.sqrt(s.V**2 - 1.0), 0.0)
    het_b2 = s.variant in ("Het2M", "HomHetM")
    het_b1 = s.variant in ("Het2M", "HetHomM")
    return t * math.sqrt((0.5 if het_b2 else 1.0) / (0.5 if het_b1 else 1.0))


def _rate_from_cm(gamma7: CovarianceMatrix, s: ProtocolScenario, method: str) -> tuple[RateReport, float]:
    k = estimated_gain(gamma7, s)
    return key_rate(replace(s, k_policy=k), method=method, gamma7=gamma7), k


@dataclass(frozen=True)
class SampledRate:
    """Key rate recomputed from shots, with a bootstrap band ``K_R ± z σ``."""

    report: RateReport
    estimate: EstimatedCM
    projected: bool
    k_hat: float
    sigma: float
    z: float
    boot_K: np.ndarray

    @property
    def K_R(self) -> float:
        return self.report.K_R

    @property
    def interval(self) -> tuple[float, float]:
        return self.K_R - self.z * self.sigma, self.K_R + self.z * self.sigma

    def as_dict(self) -> dict:
        lo, hi = self.interval
        d = self.report.as_dict()
        d.update(n_shots=self.estimate.n_shots, seed=self.estimate.seed, projected=self.projected,
                 sigma=self.sigma, z=self.z, K_R_low=lo, K_R_high=hi)
        return d


def key_rate_from_samples(
    shots: ShotRecord,
    scenario: ProtocolScenario,
    n_boot: int = N_BOOTSTRAP,
    z: float = 3.0,
    method: str = "generic",
) -> SampledRate:
    """Estimate the CM from ``shots`` and evaluate the key rate for ``scenario.variant``.

    Only ``variant``, ``V``, ``beta`` and ``k_policy`` of the scenario are used:
    everything else is learned from the data. Bootstrap resamples reuse the
    same pipeline (their projections are not subject to the 5σ check) and are
    seeded from the shots' seed, so the report is reproducible.
    """
    if not scenario.two_way:
        raise DomainError(f"shot emulation covers the two-way variants only, got {scenario.variant}")
    est = estimate_cm(shots)
    gamma, projected = project_physical(est)
    report, k = _rate_from_cm(gamma, scenario, method)

    Z = _design(shots)
    n = len(shots)
    rng = np.random.Generator(np.random.Philox(key=shots.seed ^ _BOOT_DOMAIN))
    boot = np.empty(n_boot)
    for b in range(n_boot):
        w = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
        m = _assemble(_weighted_moments(Z, w, shots.a2_is_x))
        try:
            m = _project(m, est.stderr, check=False)[0]
            boot[b] = _rate_from_cm(CovarianceMatrix(m, HET2M_MODES), scenario, method)[0].K_R
        except (ArithmeticError, ValueError):
            boot[b] = np.nan
    ok = boot[np.isfinite(boot)]
    sigma = float(np.std(ok, ddof=1)) if len(ok) > 1 else math.nan
    return SampledRate(report, est, projected, k, sigma, z, boot)
