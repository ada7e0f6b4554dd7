"""Fiber-distance conversion, parameter sweeps and root finding on the key rate."""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Sequence, TextIO, Union

import numpy as np

from .errors import DomainError, NonMonotonicWarning
from .protocols import VARIANTS, ChannelParams, KPolicy, ProtocolScenario, key_rate

FIBER_LOSS_DB_PER_KM = 0.2
AXES = ("distance_km", "epsilon", "beta", "T_A")
QUANTITIES = ("K_R", "eps_star", "d_star")
STATUSES = ("ok", "negative_rate", "no_root", "error")

EPS_TOL = 1e-6
DIST_TOL = 0.01
RESIDUAL_TOL = 1e-8
EPS_CAP = 64.0
DIST_CAP = 512.0
PRESCAN_POINTS = 32


def distance_to_T(d_km: float, loss_db_per_km: float = FIBER_LOSS_DB_PER_KM) -> float:
    """Transmittance of one fiber leg of length ``d_km``."""
    if not d_km >= 0:
        raise DomainError(f"distance must be >= 0 km, got {d_km}")
    if not loss_db_per_km >= 0:
        raise DomainError(f"fiber loss must be >= 0 dB/km, got {loss_db_per_km}")
    return 10.0 ** (-loss_db_per_km * d_km / 10.0)


@dataclass(frozen=True)
class Settings:
    """Fixed scenario fields shared by every point of a sweep or root search.

    ``V_A = "tied"`` sets ``V_A = V / (1 - T_A)``. ``T`` overrides the
    transmittance derived from ``distance_km``. The ``*2`` fields describe the
    backward leg and default to the forward one.
    """

    V: float
    V_A: Union[float, str] = 1.0
    T_A: float = 0.5
    beta: float = 1.0
    eps: float = 0.0
    distance_km: float = 0.0
    T: float | None = None
    eps2: float | None = None
    distance2_km: float | None = None
    T2: float | None = None
    loss_db_per_km: float = FIBER_LOSS_DB_PER_KM
    k_policy: KPolicy = "transmittance"
    method: str = "generic"

    def __post_init__(self):
        if isinstance(self.V_A, str) and self.V_A != "tied":
            raise DomainError(f"V_A must be a number or 'tied', got {self.V_A!r}")
        if self.method not in ("generic", "quartic"):
            raise DomainError(f"unknown spectrum method {self.method!r}")

    def _leg_T(self, d: float, T: float | None) -> float:
        return distance_to_T(d, self.loss_db_per_km) if T is None else T

    def scenario(self, variant: str) -> ProtocolScenario:
        V_A = self.V / (1.0 - self.T_A) if self.V_A == "tied" else float(self.V_A)
        ch1 = ChannelParams(self._leg_T(self.distance_km, self.T), self.eps)
        d2 = self.distance_km if self.distance2_km is None else self.distance2_km
        T2 = self.T if self.distance2_km is None and self.T2 is None else self.T2
        ch2 = ChannelParams(self._leg_T(d2, T2), self.eps if self.eps2 is None else self.eps2)
        return ProtocolScenario(variant, self.V, V_A, self.T_A, self.beta, ch1, ch2, self.k_policy)

    def with_axis(self, axis: str, value: float, symmetric: bool = True) -> "Settings":
        """Copy with one swept field replaced; distance replaces ``T`` as well."""
        if axis == "distance_km":
            if symmetric:
                return replace(self, distance_km=value, T=None, distance2_km=None, T2=None)
            d2 = self.distance_km if self.distance2_km is None else self.distance2_km
            T2 = self.T if self.distance2_km is None and self.T2 is None else self.T2
            return replace(self, distance_km=value, T=None, distance2_km=d2, T2=T2)
        if axis == "epsilon":
            if symmetric:
                return replace(self, eps=value, eps2=None)
            return replace(self, eps=value, eps2=self.eps if self.eps2 is None else self.eps2)
        if axis == "beta":
            return replace(self, beta=value)
        if axis == "T_A":
            return replace(self, T_A=value)
        raise DomainError(f"unknown sweep axis {axis!r}; expected one of {AXES}")


def rate(variant: str, settings: Settings) -> float:
    return key_rate(settings.scenario(variant), method=settings.method).K_R


@dataclass(frozen=True)
class RootResult:
    value: float
    status: str
    bracket: tuple[float, float]
    residual: float
    evaluations: int


def _prescan(f: Callable[[float], float], lo: float, hi: float, f_lo: float) -> tuple[float, float, float, float]:
    """Sample ``f`` on a uniform grid; return the first sign-change bracket."""
    xs = np.linspace(lo, hi, PRESCAN_POINTS)
    ys = [f_lo] + [f(x) for x in xs[1:]]
    pos = np.array(ys) > 0
    changes = np.flatnonzero(pos[:-1] != pos[1:])
    if len(changes) > 1:
        warnings.warn(
            f"{len(changes)} sign changes of the key rate on [{lo:g}, {hi:g}]; returning the first root",
            NonMonotonicWarning,
            stacklevel=3,
        )
    i = int(changes[0])
    return float(xs[i]), float(xs[i + 1]), ys[i], ys[i + 1]


def _bisect(f, lo, hi, f_lo, f_hi, xtol, n_eval) -> RootResult:
    """Bisection on ``f(lo) > 0 >= f(hi)``.

    Stops once the bracket is narrower than ``xtol`` and the last midpoint
    has ``|f| < RESIDUAL_TOL``, or when the bracket cannot shrink further.
    """
    x, fx = (lo, f_lo) if abs(f_lo) < abs(f_hi) else (hi, f_hi)
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = f(mid)
        n_eval += 1
        x, fx = mid, f_mid
        if f_mid > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < xtol and abs(f_mid) < RESIDUAL_TOL:
            break
    return RootResult(x, "ok", (lo, hi), fx, n_eval)


def _find_root(f, lo, f_lo, grow_from, cap, xtol) -> RootResult:
    hi = grow_from
    f_hi = f(hi)
    n_eval = 2
    while f_hi > 0 and hi < cap:
        hi = min(2.0 * hi, cap)
        f_hi = f(hi)
        n_eval += 1
    if f_hi > 0:
        return RootResult(math.nan, "no_root", (lo, hi), f_hi, n_eval)
    a, b, f_a, f_b = _prescan(f, lo, hi, f_lo)
    return _bisect(f, a, b, f_a, f_b, xtol, n_eval + PRESCAN_POINTS - 1)


def tolerable_epsilon(variant: str, settings: Settings) -> RootResult:
    """Largest symmetric excess noise with nonnegative key rate at the settings' distance.

    ``no_root`` when even a noiseless channel gives ``K_R <= 0``, or when the
    rate stays positive up to ``ε = 64``.
    """
    def f(e):
        return rate(variant, settings.with_axis("epsilon", e))

    f0 = f(0.0)
    if f0 <= 0:
        return RootResult(math.nan, "no_root", (0.0, 0.0), f0, 1)
    return _find_root(f, 0.0, f0, 1.0, EPS_CAP, EPS_TOL)


def max_distance(variant: str, settings: Settings) -> RootResult:
    """Fiber length per leg at which the key rate reaches zero.

    ``no_root`` when ``K_R <= 0`` at 0 km, or when the rate stays positive up
    to the 512 km search cap (e.g. a noiseless channel).
    """
    def f(d):
        return rate(variant, settings.with_axis("distance_km", d))

    f0 = f(0.0)
    if f0 <= 0:
        return RootResult(math.nan, "no_root", (0.0, 0.0), f0, 1)
    return _find_root(f, 0.0, f0, 1.0, DIST_CAP, DIST_TOL)


@dataclass(frozen=True)
class SweepSpec:
    variants: Sequence[str]
    axis: str
    grid: Sequence[float]
    settings: Settings
    quantity: str = "K_R"
    symmetric: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(self.variants))
        object.__setattr__(self, "grid", tuple(float(v) for v in self.grid))
        for v in self.variants:
            if v not in VARIANTS:
                raise DomainError(f"unknown variant {v!r}; expected one of {VARIANTS}")
        if self.axis not in AXES:
            raise DomainError(f"unknown sweep axis {self.axis!r}; expected one of {AXES}")
        if self.quantity not in QUANTITIES:
            raise DomainError(f"unknown quantity {self.quantity!r}; expected one of {QUANTITIES}")
        if (self.quantity, self.axis) in (("eps_star", "epsilon"), ("d_star", "distance_km")):
            raise DomainError(f"cannot sweep {self.axis} while solving for it")
        g = np.asarray(self.grid)
        if np.any(~np.isfinite(g)):
            raise DomainError("sweep grid must be finite")
        if np.any(np.diff(g) <= 0):
            raise DomainError("sweep grid must be strictly increasing")
        if self.axis == "distance_km" and len(g) and g[0] < 0:
            raise DomainError("distances must be >= 0 km")
        # every grid point must produce a valid scenario before anything is computed
        for value in self.grid:
            s = self.settings.with_axis(self.axis, value, self.symmetric)
            for v in self.variants:
                s.scenario(v)


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    variant: str
    quantity: str
    result: float
    status: str
    message: str = field(default="", compare=False)


def _evaluate(task: tuple[SweepSpec, float, str]) -> SweepRow:
    spec, value, variant = task
    s = spec.settings.with_axis(spec.axis, value, spec.symmetric)
    try:
        if spec.quantity == "K_R":
            K = rate(variant, s)
            return SweepRow(spec.axis, value, variant, spec.quantity, K, "ok" if K >= 0 else "negative_rate")
        root = tolerable_epsilon(variant, s) if spec.quantity == "eps_star" else max_distance(variant, s)
        return SweepRow(spec.axis, value, variant, spec.quantity, root.value, root.status)
    except (ArithmeticError, ValueError) as exc:
        return SweepRow(spec.axis, value, variant, spec.quantity, math.nan, "error", str(exc))


def iter_sweep(spec: SweepSpec, workers: int = 1) -> Iterator[SweepRow]:
    """Rows of ``sweep`` yielded as they complete, still in grid order."""
    tasks = [(spec, value, variant) for value in spec.grid for variant in spec.variants]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(_evaluate, tasks)
    else:
        for t in tasks:
            yield _evaluate(t)


def sweep(spec: SweepSpec, workers: int = 1) -> list[SweepRow]:
    """Evaluate ``spec.quantity`` for every (grid value, variant) pair, in grid order.

    A failing point yields a row with status ``error`` instead of aborting.
    ``workers > 1`` evaluates points in separate processes; the table is the same.
    """
    return list(iter_sweep(spec, workers))


def format_float(x: float) -> str:
    """Scientific notation with 17 significant digits (round-trips a double)."""
    return "%.16e" % x


def write_sweep_csv(rows: Iterable[SweepRow], out: TextIO, quantity: str = "K_R") -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["axis", "value", "variant", quantity, "status"])
    for r in rows:
        w.writerow([r.axis, format_float(r.value), r.variant, format_float(r.result), r.status])
        out.flush()


def read_sweep_csv(src: TextIO) -> list[SweepRow]:
    reader = csv.reader(src)
    header = next(reader)
    quantity = header[3]
    return [SweepRow(a, float(v), var, quantity, float(q), st) for a, v, var, q, st in reader]
