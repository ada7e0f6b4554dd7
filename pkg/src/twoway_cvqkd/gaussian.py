"""Covariance-matrix algebra for multimode Gaussian states.

Conventions: quadratures are interleaved ``(x1, p1, x2, p2, ...)`` and the
vacuum variance is 1 (shot-noise units). Entropies are in bits.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionError, DomainError, NumericalError, PhysicalityError

PHYSICAL_TOL = 1e-8
SYMPLECTIC_TOL = 1e-12
PAIRING_TOL = 1e-6
PINV_RTOL = 1e-12
# relative size below which an intermediate of the quartic formula is treated as exactly zero
_SNAP = 1e-12

_QUAD = {"x": 0, "p": 1}


def omega(n: int) -> np.ndarray:
    """Symplectic form ``⊕ [[0, 1], [-1, 0]]`` on ``n`` modes."""
    return np.kron(np.eye(n), np.array([[0.0, 1.0], [-1.0, 0.0]]))


SIGMA_Z = np.diag([1.0, -1.0])


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """Real symmetric ``2n x 2n`` covariance matrix over labelled modes.

    The stored matrix is symmetrized on construction and made read-only.
    """

    matrix: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2:
            raise DimensionError(f"covariance matrix must be 2n x 2n, got {m.shape}")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        n = m.shape[0] // 2
        labels = tuple(self.labels) if self.labels else tuple(f"m{i}" for i in range(n))
        if len(labels) != n:
            raise DimensionError(f"{len(labels)} labels for {n} modes")
        if len(set(labels)) != n:
            raise DimensionError(f"duplicate mode labels in {labels}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", labels)

    @property
    def n_modes(self) -> int:
        return len(self.labels)

    def index(self, mode: int | str) -> int:
        if isinstance(mode, str):
            try:
                return self.labels.index(mode)
            except ValueError:
                raise IndexError(f"no mode labelled {mode!r} in {self.labels}") from None
        if not 0 <= mode < self.n_modes:
            raise IndexError(f"mode index {mode} out of range for {self.n_modes} modes")
        return int(mode)

    def qindex(self, mode: int | str, quadrature: str) -> int:
        """Row index of quadrature ``'x'`` or ``'p'`` of ``mode``."""
        return 2 * self.index(mode) + _QUAD[quadrature]

    def block(self, a: int | str, b: int | str | None = None) -> np.ndarray:
        i = self.index(a)
        j = i if b is None else self.index(b)
        return self.matrix[2 * i : 2 * i + 2, 2 * j : 2 * j + 2]

    def cov(self, a: int | str, qa: str, b: int | str, qb: str) -> float:
        return float(self.matrix[self.qindex(a, qa), self.qindex(b, qb)])

    def relabel(self, labels: Sequence[str]) -> "CovarianceMatrix":
        return CovarianceMatrix(self.matrix, tuple(labels))

    def to_csv(self) -> str:
        """Row-major CSV; the header names columns ``<label>_x, <label>_p`` in order."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"{lab}_{q}" for lab in self.labels for q in "xp"])
        for row in self.matrix:
            w.writerow([f"{v:.17e}" for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CovarianceMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        labels = [h[:-2] for h in header[::2]]
        return cls(np.array(body, dtype=float), tuple(labels))


def as_cm(gamma) -> CovarianceMatrix:
    return gamma if isinstance(gamma, CovarianceMatrix) else CovarianceMatrix(gamma)


# ---------------------------------------------------------------------------
# states


def vacuum_cm(n: int = 1, labels: Sequence[str] = ()) -> CovarianceMatrix:
    return CovarianceMatrix(np.eye(2 * n), tuple(labels))


def thermal_cm(W: float, labels: Sequence[str] = ()) -> CovarianceMatrix:
    if W < 1:
        raise DomainError(f"thermal variance must be >= 1, got {W}")
    return CovarianceMatrix(W * np.eye(2), tuple(labels))


def epr_cm(V: float, labels: Sequence[str] = ()) -> CovarianceMatrix:
    """Two-mode squeezed vacuum with quadrature variance ``V``."""
    if not V >= 1:
        raise DomainError(f"EPR variance V must be >= 1, got {V}")
    c = np.sqrt(V * V - 1.0)
    m = np.block([[V * np.eye(2), c * SIGMA_Z], [c * SIGMA_Z, V * np.eye(2)]])
    return CovarianceMatrix(m, tuple(labels))


# ---------------------------------------------------------------------------
# symplectic transforms (plain ndarrays)


def is_symplectic(S: np.ndarray, tol: float = SYMPLECTIC_TOL) -> bool:
    n = S.shape[0] // 2
    Om = omega(n)
    return bool(np.max(np.abs(S @ Om @ S.T - Om)) < tol)


def _check_modes(n: int, *modes: int) -> None:
    if n < 1:
        raise DomainError(f"number of modes must be positive, got {n}")
    for m in modes:
        if not 0 <= m < n:
            raise DomainError(f"mode index {m} out of range for {n} modes")
    if len(set(modes)) != len(modes):
        raise DomainError(f"mode indices must be distinct, got {modes}")


def beam_splitter(T: float, i: int, j: int, n: int) -> np.ndarray:
    """Beam splitter of transmittance ``T`` between modes ``i`` and ``j``.

    ``x_i' = √T x_i + √(1-T) x_j`` and ``x_j' = -√(1-T) x_i + √T x_j``,
    identically for ``p``. With ``T = 1/2`` this is the 50:50 heterodyne splitter.
    """
    if not 0.0 <= T <= 1.0:
        raise DomainError(f"beam-splitter transmittance must lie in [0, 1], got {T}")
    _check_modes(n, i, j)
    t, r = np.sqrt(T), np.sqrt(1.0 - T)
    S = np.eye(2 * n)
    for q in range(2):
        a, b = 2 * i + q, 2 * j + q
        S[a, a], S[a, b] = t, r
        S[b, a], S[b, b] = -r, t
    return S


def cnot_gate(k: float, control: int, target: int, n: int) -> np.ndarray:
    """Continuous-variable C-NOT: ``x_t' = x_t - k x_c`` and ``p_c' = p_c + k p_t``."""
    if not np.isfinite(k):
        raise DomainError(f"C-NOT gain must be finite, got {k}")
    _check_modes(n, control, target)
    S = np.eye(2 * n)
    S[2 * target, 2 * control] = -k
    S[2 * control + 1, 2 * target + 1] = k
    return S


def apply(S: np.ndarray, gamma) -> CovarianceMatrix:
    """Congruence ``S Γ Sᵀ``; labels are carried over unchanged."""
    g = as_cm(gamma)
    S = np.asarray(S, dtype=float)
    if S.shape != g.matrix.shape:
        raise DimensionError(f"transform {S.shape} does not match state {g.matrix.shape}")
    return CovarianceMatrix(S @ g.matrix @ S.T, g.labels)


def direct_sum(parts: Iterable) -> CovarianceMatrix:
    parts = [as_cm(p) for p in parts]
    if not parts:
        raise DimensionError("direct_sum needs at least one part")
    m = scipy.linalg.block_diag(*[p.matrix for p in parts])
    labels = tuple(lab for p in parts for lab in p.labels)
    if len(set(labels)) != len(labels):
        labels = ()  # colliding names (e.g. two unlabelled parts): renumber
    return CovarianceMatrix(m, labels)


def _quad_indices(modes: Sequence[int]) -> np.ndarray:
    return np.array([2 * m + q for m in modes for q in (0, 1)], dtype=int)


def reorder(gamma, permutation: Sequence[int | str]) -> CovarianceMatrix:
    """Simultaneous row/column permutation; ``permutation[i]`` is the old mode placed at ``i``."""
    g = as_cm(gamma)
    idx = [g.index(m) for m in permutation]
    if sorted(idx) != list(range(g.n_modes)):
        raise IndexError(f"{list(permutation)} is not a permutation of {g.labels}")
    q = _quad_indices(idx)
    return CovarianceMatrix(g.matrix[np.ix_(q, q)], tuple(g.labels[i] for i in idx))


def reduce(gamma, modes: Sequence[int | str]) -> CovarianceMatrix:
    """Reduced state of ``modes`` (principal submatrix), in the given order."""
    g = as_cm(gamma)
    idx = [g.index(m) for m in modes]
    if not idx:
        raise DimensionError("cannot reduce to zero modes")
    if len(set(idx)) != len(idx):
        raise IndexError(f"repeated modes in {list(modes)}")
    q = _quad_indices(idx)
    return CovarianceMatrix(g.matrix[np.ix_(q, q)], tuple(g.labels[i] for i in idx))


def embed(S_local: np.ndarray, modes: Sequence[int], n: int) -> np.ndarray:
    """Lift a transform acting on ``modes`` (in that order) to ``n`` modes."""
    q = _quad_indices(modes)
    S = np.eye(2 * n)
    S[np.ix_(q, q)] = S_local
    return S


# ---------------------------------------------------------------------------
# spectra


class SymplecticSpectrum(NamedTuple):
    eigenvalues: np.ndarray  # descending
    method: str


def roundoff_tol(matrix: np.ndarray) -> float:
    """Tolerance below 1 accepted for a symplectic eigenvalue of ``matrix``.

    Entry rounding perturbs symplectic eigenvalues by about ``eps·‖Γ‖²``, so
    the floor grows for strongly squeezed states; it is ``1e-8`` otherwise.
    """
    norm = np.linalg.norm(matrix, 2)
    return max(PHYSICAL_TOL, 10.0 * np.finfo(float).eps * norm * norm)


def _clamp(values: np.ndarray, tol: float) -> np.ndarray:
    low = values < 1.0 - tol
    if np.any(low):
        raise PhysicalityError(
            f"symplectic eigenvalue {values[low].min():.12g} below 1 (tolerance {tol:.1e})"
        )
    return np.where(values < 1.0, 1.0, values)


def symplectic_spectrum_generic(gamma, clamp: bool = True) -> SymplecticSpectrum:
    """Symplectic eigenvalues as moduli of the eigenvalues of ``ΩΓ``.

    For positive-definite Γ the similar matrix ``Γ^½ Ω Γ^½`` is used instead:
    it is antisymmetric, so a Hermitian solver returns the ``±λ`` pairs with
    round-off bounded by ``eps·‖Γ‖`` rather than by the conditioning of ``ΩΓ``.
    """
    g = as_cm(gamma)
    m, n = g.matrix, g.n_modes
    try:
        w, U = np.linalg.eigh(m)
        if w.min() > 0:
            root = (U * np.sqrt(w)) @ U.T
            ev = np.linalg.eigvalsh(1j * (root @ omega(n) @ root))
            pos, neg = ev[n:][::-1], -ev[:n]
        else:
            mod = np.sort(np.abs(np.linalg.eigvals(omega(n) @ m)))[::-1]
            pos, neg = mod[0::2], mod[1::2]
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigen-solve failed: {exc}") from exc
    scale = max(1.0, float(pos.max()))
    mismatch = float(np.max(np.abs(pos - neg)))
    if mismatch > PAIRING_TOL * scale:
        raise NumericalError(f"eigenvalues of ΩΓ do not pair up (mismatch {mismatch:.3g})")
    lam = np.sort(0.5 * (pos + neg))[::-1]
    if clamp:
        lam = _clamp(lam, roundoff_tol(m))
    return SymplecticSpectrum(lam, "generic")


def symplectic_invariants(gamma) -> tuple[float, float, float, float]:
    """Sums of the principal minors of order 2, 4, 6, 8 of ``ΩΓ`` for a 4-mode state."""
    g = as_cm(gamma)
    if g.n_modes != 4:
        raise DimensionError(f"symplectic_invariants needs 4 modes, got {g.n_modes}")
    a = omega(4) @ g.matrix
    out = []
    for j in (1, 2, 3, 4):
        subsets = np.array(list(itertools.combinations(range(8), 2 * j)))
        subs = a[subsets[:, :, None], subsets[:, None, :]]
        out.append(float(np.sum(np.linalg.det(subs))))
    return tuple(out)


def _snap(value: float, magnitude: float) -> float:
    return 0.0 if abs(value) <= _SNAP * magnitude else value


def symplectic_spectrum_quartic(invariants: Sequence[float], clamp: bool = True) -> SymplecticSpectrum:
    """Four symplectic eigenvalues from the radical solution of the invariant quartic.

    The squared eigenvalues solve
    ``z⁴ - Δ1 z³ + Δ2 z² - Δ3 z + Δ4 = 0``; the resolvent cubic is solved by
    Cardano's formula in complex arithmetic (three real roots is the usual case).
    """
    d1, d2, d3, d4 = (float(v) for v in invariants)
    H = d2**2 - 3 * d1 * d3 + 12 * d4
    L = 2 * d2**3 - 9 * d1 * d2 * d3 + 27 * d3**2 + 27 * d1**2 * d4 - 72 * d2 * d4
    H = _snap(H, d2**2 + abs(3 * d1 * d3) + abs(12 * d4))
    L = _snap(L, abs(2 * d2**3) + abs(9 * d1 * d2 * d3) + 27 * d3**2 + abs(27 * d1**2 * d4) + abs(72 * d2 * d4))

    disc = L * L - 4 * H**3
    c2 = 2.0 ** (1.0 / 3.0)
    if disc >= 0:
        s = np.sqrt(disc)
        base = L + s if abs(L + s) >= abs(L - s) else L - s
        J: complex = complex(np.cbrt(base))
    else:
        J = (L + 1j * np.sqrt(-disc)) ** (1.0 / 3.0)
    if J == 0:
        theta = 0.0
    else:
        t = c2 * H / (3 * J) + J / (3 * c2)
        if abs(t.imag) > 1e-6 * max(1.0, abs(t.real)):
            raise NumericalError(f"resolvent root is not real (Θ = {t})")
        theta = t.real

    scale = d1 * d1
    r1 = _snap(d1**2 / 4 - 2 * d2 / 3 + theta, scale)
    if r1 < -PHYSICAL_TOL * scale:
        raise NumericalError(f"negative radicand {r1:.3g}; invariants are ill-conditioned")
    s1 = np.sqrt(max(r1, 0.0))
    shift = 0.0 if s1 == 0 else (d1**3 - 4 * d1 * d2 + 8 * d3) / (4 * s1)
    base = d1**2 / 2 - 4 * d2 / 3 - theta
    z = []
    for sign_outer, r2 in ((-1, base - shift), (+1, base + shift)):
        r2 = _snap(r2, scale)
        if r2 < -PHYSICAL_TOL * scale:
            raise NumericalError(f"negative radicand {r2:.3g}; invariants are ill-conditioned")
        s2 = np.sqrt(max(r2, 0.0))
        centre = d1 / 4 + sign_outer * s1 / 2
        z.extend([centre - s2 / 2, centre + s2 / 2])
    z = np.asarray(z)
    if np.any(z < -PHYSICAL_TOL * max(1.0, abs(d1))):
        raise NumericalError(f"negative squared eigenvalue in {z}")
    lam = np.sort(np.sqrt(np.clip(z, 0.0, None)))[::-1]
    if clamp:
        lam = _clamp(lam, max(PHYSICAL_TOL, 1e3 * np.finfo(float).eps * max(1.0, abs(d1))))
    return SymplecticSpectrum(lam, "quartic")


def symplectic_spectrum(gamma, method: str = "generic") -> SymplecticSpectrum:
    if method == "generic":
        return symplectic_spectrum_generic(gamma)
    if method == "quartic":
        return symplectic_spectrum_quartic(symplectic_invariants(gamma))
    raise ValueError(f"unknown spectrum method {method!r}")


def g_function(lam):
    """Entropy in bits of a thermal mode with symplectic eigenvalue ``lam``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 1.0 - PHYSICAL_TOL):
        raise DomainError(f"symplectic eigenvalue below 1: {lam.min()}")
    a = (lam + 1.0) / 2.0
    b = np.clip((lam - 1.0) / 2.0, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a * np.log2(a) - np.where(b > 0, b * np.log2(np.where(b > 0, b, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def von_neumann_entropy(gamma, method: str = "generic") -> float:
    return float(np.sum(g_function(symplectic_spectrum(gamma, method).eigenvalues)))


# ---------------------------------------------------------------------------
# measurement


def condition_on_homodyne(gamma, mode: int | str, quadrature: str, check: bool = True) -> CovarianceMatrix:
    """State of the remaining modes after homodyning ``quadrature`` of ``mode``.

    ``Γ' = Γ_rest - C (X γ X)^MP Cᵀ`` where ``X`` projects onto the measured
    quadrature and ``MP`` inverts on the range only.
    """
    g = as_cm(gamma)
    if quadrature not in _QUAD:
        raise ValueError(f"quadrature must be 'x' or 'p', got {quadrature!r}")
    i = g.index(mode)
    if g.n_modes < 2:
        raise DimensionError("conditioning needs at least one remaining mode")
    rest = [m for m in range(g.n_modes) if m != i]
    qr = _quad_indices(rest)
    qm = 2 * i + _QUAD[quadrature]
    out = g.matrix[np.ix_(qr, qr)].copy()
    gamma_m = g.matrix[2 * i : 2 * i + 2, 2 * i : 2 * i + 2]
    var = g.matrix[qm, qm]
    if var >= PINV_RTOL * np.trace(gamma_m) and var > 0:
        c = g.matrix[qr, qm]
        out -= np.outer(c, c) / var
    result = CovarianceMatrix(out, tuple(g.labels[m] for m in rest))
    if check:
        symplectic_spectrum_generic(result)  # raises PhysicalityError
    return result


def williamson(gamma) -> tuple[np.ndarray, np.ndarray]:
    """Williamson normal form ``Γ = S diag(λ1, λ1, λ2, λ2, ...) Sᵀ``.

    Returns ``(λ, S)`` with ``S`` symplectic. Γ must be positive definite.
    """
    g = as_cm(gamma)
    m, n = g.matrix, g.n_modes
    w, U = np.linalg.eigh(m)
    if w.min() <= 0:
        raise PhysicalityError(f"covariance matrix is not positive definite (min eigenvalue {w.min():.3g})")
    root = (U * np.sqrt(w)) @ U.T
    inv_root = (U / np.sqrt(w)) @ U.T
    A = inv_root @ omega(n) @ inv_root
    A = 0.5 * (A - A.T)
    T, K = scipy.linalg.schur(A, output="real")
    lam = np.empty(n)
    K = K.copy()
    for b in range(n):
        t = T[2 * b, 2 * b + 1]
        if t < 0:
            K[:, [2 * b, 2 * b + 1]] = K[:, [2 * b + 1, 2 * b]]
            t = -t
        lam[b] = 1.0 / t
    S = root @ K @ np.diag(np.repeat(1.0 / np.sqrt(lam), 2))
    return lam, S
