"""Hardware error model: Majorana error budgets, link timing, and visibility.

Maps the microscopic error parameters (readout misassignment p_r, braid
infidelity p_b, quasiparticle poisoning rate gamma_p, false-herald fraction
zeta, residual depolarization p_dep, calibration drift delta_cal) and the
link timing to poisoning probabilities, effective Bell-state visibility and
the CHSH parameter S.

Two visibility regimes are provided:

* the multiplicative ("product") form
      V = (1 - 2 p_r)^2 (1 - p_b)^n (1 - 2 pbar_p),
  which is what per-party readout flips and per-braid depolarization
  physically produce, and
* the isotropic linear-subtraction form
      V_iso = 1 - (2 p_r + kbar p_b + 2 pbar_p + p_dep + zeta),
  the Werner-contraction convention used for sensitivity analysis
  (dS/dp_r = -4 sqrt(2), dS/dzeta = -2 sqrt(2) at S = 2 sqrt(2) V_iso).

The two agree to O(error^2) only where readout is excluded; see the
consistency tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate

from .errors import ModelError

TSIRELSON = 2.0 * math.sqrt(2.0)

# Parameters V_iso depends on, in a fixed order (gradient API).
ISO_PARAMS = ("p_r", "p_b", "p_bar_p", "p_dep", "zeta")


def _check_prob(name: str, value: float, upper: float = 0.5) -> None:
    if not 0.0 <= value < upper:
        raise ValueError(f"{name} must lie in [0, {upper}), got {value!r}")


@dataclass(frozen=True)
class ErrorBudget:
    """Hardware error budget.

    p_r: readout misassignment per measurement
    p_b: infidelity per elementary braid
    gamma_p: quasiparticle poisoning rate, 1/s
    zeta: false-herald fraction
    p_dep: residual depolarization per round
    delta_cal: correlator drift bound (dimensionless)
    """

    p_r: float = 0.0
    p_b: float = 0.0
    gamma_p: float = 0.0
    zeta: float = 0.0
    p_dep: float = 0.0
    delta_cal: float = 0.0

    def __post_init__(self) -> None:
        for name in ("p_r", "p_b", "zeta", "p_dep"):
            _check_prob(name, getattr(self, name))
        if self.gamma_p < 0:
            raise ValueError(f"gamma_p must be >= 0, got {self.gamma_p!r}")
        if self.delta_cal < 0:
            raise ValueError(f"delta_cal must be >= 0, got {self.delta_cal!r}")

    def replace(self, **changes) -> "ErrorBudget":
        return replace(self, **changes)


# --------------------------------------------------------------------------
# Dwell-time distributions
#
# All three descriptors support the same operations: nominal mean, the
# truncated-and-renormalized expectation of a function over [0, tau_max],
# and sampling (used by the quadrature-vs-Monte-Carlo cross checks).
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DegenerateDwell:
    """All rounds dwell exactly `mean` seconds."""

    mean: float

    def __post_init__(self) -> None:
        if self.mean < 0:
            raise ValueError("dwell mean must be >= 0")

    def expect(self, fn: Callable[[float], float], tau_max: float) -> float:
        if self.mean > tau_max:
            raise ModelError(
                f"degenerate dwell at {self.mean} s lies beyond tau_max={tau_max} s; "
                "all mass discarded"
            )
        return fn(self.mean)

    def truncated_mean(self, tau_max: float) -> float:
        if self.mean > tau_max:
            raise ModelError("degenerate dwell beyond tau_max")
        return self.mean

    def sample(self, rng: np.random.Generator, n: int, tau_max: float) -> np.ndarray:
        self.truncated_mean(tau_max)
        return np.full(n, self.mean)


@dataclass(frozen=True)
class ExponentialDwell:
    """Exponential dwell times with the given (untruncated) mean."""

    mean: float

    def __post_init__(self) -> None:
        if self.mean <= 0:
            raise ValueError("exponential dwell mean must be > 0")

    def _norm(self, tau_max: float) -> float:
        z = 1.0 - math.exp(-tau_max / self.mean)
        if z <= 0.0:
            raise ModelError("exponential dwell fully truncated; unnormalizable")
        return z

    def expect(self, fn: Callable[[float], float], tau_max: float) -> float:
        z = self._norm(tau_max)
        m = self.mean
        # Smooth bounded integrand; adaptive quadrature at abs tol 1e-12.
        val, _ = integrate.quad(
            lambda t: fn(t) * math.exp(-t / m) / m,
            0.0,
            tau_max,
            epsabs=1e-12,
            epsrel=1e-12,
            limit=200,
        )
        return val / z

    def truncated_mean(self, tau_max: float) -> float:
        return self.expect(lambda t: t, tau_max)

    def sample(self, rng: np.random.Generator, n: int, tau_max: float) -> np.ndarray:
        z = self._norm(tau_max)
        u = rng.random(n)
        return -self.mean * np.log1p(-u * z)


@dataclass(frozen=True)
class HistogramDwell:
    """Empirical dwell histogram: point masses at `times` with `weights`."""

    times: tuple[float, ...]
    weights: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if len(self.times) == 0:
            raise ModelError("empty dwell histogram")
        w = self.weights or tuple(1.0 for _ in self.times)
        if len(w) != len(self.times):
            raise ValueError("times and weights length mismatch")
        if any(x < 0 for x in w) or any(t < 0 for t in self.times):
            raise ValueError("histogram times and weights must be >= 0")
        if sum(w) <= 0:
            raise ModelError("dwell histogram has zero total weight")
        object.__setattr__(self, "weights", w)

    @property
    def mean(self) -> float:
        t = np.asarray(self.times, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        return float(np.dot(w, t) / w.sum())

    def _truncated(self, tau_max: float) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(self.times, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        keep = t <= tau_max
        t, w = t[keep], w[keep]
        total = w.sum()
        if total <= 0.0:
            raise ModelError("dwell histogram has no mass within tau_max")
        return t, w / total

    def expect(self, fn: Callable[[float], float], tau_max: float) -> float:
        t, w = self._truncated(tau_max)
        return float(np.dot(w, [fn(x) for x in t]))

    def truncated_mean(self, tau_max: float) -> float:
        t, w = self._truncated(tau_max)
        return float(np.dot(w, t))

    def sample(self, rng: np.random.Generator, n: int, tau_max: float) -> np.ndarray:
        t, w = self._truncated(tau_max)
        return rng.choice(t, size=n, p=w)


DwellDistribution = DegenerateDwell | ExponentialDwell | HistogramDwell


@dataclass(frozen=True)
class TimingModel:
    """Link timing: fiber length, propagation, operation overheads, cutoff.

    dwell_dist=None means "degenerate at dwell_time(self)", the default
    convention for sweeps.
    """

    L: float = 0.0  # meters
    c_fiber: float = 2.0e8  # m/s, standard fiber group velocity
    t_braid: float = 0.0
    t_readout: float = 0.0
    tau_overhead: float = 0.0
    tau_max: float = 1.0
    dwell_dist: DwellDistribution | None = None

    def __post_init__(self) -> None:
        for name in ("L", "t_braid", "t_readout", "tau_overhead", "tau_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.c_fiber <= 0:
            raise ValueError("c_fiber must be > 0")
        mean = (
            self.dwell_dist.mean
            if self.dwell_dist is not None and hasattr(self.dwell_dist, "mean")
            else dwell_time(self)
        )
        if self.tau_max < mean:
            raise ValueError(
                f"tau_max={self.tau_max} below mean dwell {mean}; "
                "every round would be discarded"
            )

    def dwell_distribution(self) -> DwellDistribution:
        if self.dwell_dist is not None:
            return self.dwell_dist
        return DegenerateDwell(dwell_time(self))

    def replace(self, **changes) -> "TimingModel":
        return replace(self, **changes)


@dataclass(frozen=True)
class BraidSchedule:
    """Braid counts per CHSH test setting and for the key setting.

    m_xy maps the four settings in order (0,0), (0,1), (1,0), (1,1).
    The key basis is the native parity readout and must not cost more
    braids than any test setting.
    """

    m_xy: tuple[int, int, int, int] = (0, 2, 2, 2)
    m_key: int = 0

    def __post_init__(self) -> None:
        if any(m < 0 for m in self.m_xy) or self.m_key < 0:
            raise ValueError("braid counts must be >= 0")
        if self.m_key > min(self.m_xy):
            raise ValueError("key-basis braid count must not exceed any test setting")

    @property
    def k_bar(self) -> float:
        """Mean braid depth over the four test settings."""
        return sum(self.m_xy) / 4.0


@dataclass(frozen=True)
class Tier:
    """Named hardware maturity preset."""

    name: str
    budget: ErrorBudget

    _PINNED = {"conservative": 0.01, "target": 0.004, "optimistic": 0.001}

    def __post_init__(self) -> None:
        key = self.name.lower()
        if key not in self._PINNED:
            raise ValueError(f"unknown tier name {self.name!r}")
        if not math.isclose(self.budget.p_r, self._PINNED[key], rel_tol=1e-9):
            raise ValueError(
                f"tier {self.name} requires p_r={self._PINNED[key]}, "
                f"got {self.budget.p_r}"
            )
        if key == "conservative" and not math.isclose(
            self.budget.gamma_p, 0.5, rel_tol=1e-9
        ):
            raise ValueError("conservative tier requires gamma_p = 0.5 /s")


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def poisoning_flip_prob(gamma_p: float, t: float) -> float:
    """Parity-flip probability after dwelling t seconds at poisoning rate gamma_p.

    (1 - exp(-gamma_p * t)) / 2: Poissonian arrivals, fully mixed parity in
    the long-time limit.
    """
    if gamma_p < 0 or t < 0:
        raise ValueError("gamma_p and t must be >= 0")
    return -math.expm1(-gamma_p * t) / 2.0


def mean_poisoning_prob(
    gamma_p: float, dwell_dist: DwellDistribution, tau_max: float
) -> float:
    """Dwell-averaged parity-flip probability, truncated at tau_max.

    Integrates poisoning_flip_prob over the dwell density renormalized to
    [0, tau_max]; reduces to the pointwise formula for a degenerate dwell
    and to gamma_p * E[tau] / 2 in the linear regime.
    """
    if gamma_p < 0:
        raise ValueError("gamma_p must be >= 0")
    if tau_max < 0:
        raise ValueError("tau_max must be >= 0")
    if gamma_p == 0.0:
        # Still validates normalizability of the truncated distribution.
        dwell_dist.truncated_mean(tau_max)
        return 0.0
    return dwell_dist.expect(lambda t: poisoning_flip_prob(gamma_p, t), tau_max)


def dwell_time(timing: TimingModel) -> float:
    """Storage latency: L/c_fiber + t_braid + t_readout + tau_overhead."""
    return timing.L / timing.c_fiber + timing.t_braid + timing.t_readout + timing.tau_overhead


def visibility_product(budget: ErrorBudget, n_braids: float, p_bar_p: float) -> float:
    """Multiplicative effective visibility (1-2p_r)^2 (1-p_b)^n (1-2pbar_p)."""
    if n_braids < 0:
        raise ValueError("n_braids must be >= 0")
    _check_prob("p_bar_p", p_bar_p, upper=0.5 + 1e-15)
    return (
        (1.0 - 2.0 * budget.p_r) ** 2
        * (1.0 - budget.p_b) ** n_braids
        * (1.0 - 2.0 * p_bar_p)
    )


class IsotropicVisibility(NamedTuple):
    value: float
    collapsed: bool

    # Arithmetic convenience: the tuple mostly travels as its value.
    def __float__(self) -> float:
        return self.value


def visibility_isotropic(
    budget: ErrorBudget, k_bar: float, p_bar_p: float
) -> IsotropicVisibility:
    """Werner-contraction visibility 1 - (2p_r + kbar*p_b + 2pbar_p + p_dep + zeta).

    Clamped at 0 with collapsed=True when the error sum reaches 1; downstream
    S and Q formulas require V in [0, 1].
    """
    if k_bar < 0:
        raise ValueError("k_bar must be >= 0")
    _check_prob("p_bar_p", p_bar_p, upper=0.5 + 1e-15)
    err_sum = (
        2.0 * budget.p_r
        + k_bar * budget.p_b
        + 2.0 * p_bar_p
        + budget.p_dep
        + budget.zeta
    )
    if err_sum >= 1.0:
        return IsotropicVisibility(0.0, True)
    return IsotropicVisibility(1.0 - err_sum, False)


#: CHSH-optimal ideal correlators for settings (0,0), (0,1), (1,0), (1,1):
#: Alice measures at {0, pi/4}, Bob at {pi/8, -pi/8} (Bloch convention),
#: giving E = +1/sqrt2 for the first three settings and -1/sqrt2 for (1,1).
IDEAL_CORRELATORS = (
    1.0 / math.sqrt(2.0),
    1.0 / math.sqrt(2.0),
    1.0 / math.sqrt(2.0),
    -1.0 / math.sqrt(2.0),
)


def chsh_anisotropic_lower_bound(
    budget: ErrorBudget,
    schedule: BraidSchedule,
    ideal_correlators: Sequence[float] = IDEAL_CORRELATORS,
) -> float:
    """Worst-case anisotropic S: sum of per-setting damped |E_ideal| minus 4*delta_cal.

    Each setting's correlator is damped by the readout factor (1-2p_r)^2 and
    its own braid depth (1-p_b)^m_xy.
    """
    if len(ideal_correlators) != 4:
        raise ValueError("need four ideal correlators")
    if any(abs(e) > 1.0 + 1e-12 for e in ideal_correlators):
        raise ValueError("|ideal correlator| must be <= 1")
    readout = (1.0 - 2.0 * budget.p_r) ** 2
    total = sum(
        readout * (1.0 - budget.p_b) ** m * abs(e)
        for m, e in zip(schedule.m_xy, ideal_correlators)
    )
    return total - 4.0 * budget.delta_cal


def s_isotropic(budget: ErrorBudget, k_bar: float, p_bar_p: float) -> float:
    """Regime-I Bell parameter S = 2*sqrt(2)*V_iso (collapse clamps to 0)."""
    return TSIRELSON * visibility_isotropic(budget, k_bar, p_bar_p).value


def sensitivity_gradient(budget: ErrorBudget, at: str, k_bar: float = 1.0) -> float:
    """Analytic dS/d(parameter) in the isotropic regime S = 2*sqrt(2)*V_iso.

    Parameters: p_r (-4*sqrt2), p_b (-2*sqrt2*kbar), p_bar_p (-4*sqrt2),
    p_dep (-2*sqrt2), zeta (-2*sqrt2). Matches central finite differences of
    the composed S to relative 1e-6 (see tests).
    """
    slopes = {
        "p_r": -2.0 * TSIRELSON,
        "p_b": -k_bar * TSIRELSON,
        "p_bar_p": -2.0 * TSIRELSON,
        "p_dep": -TSIRELSON,
        "zeta": -TSIRELSON,
    }
    if at not in slopes:
        raise ValueError(f"unknown parameter {at!r}; expected one of {ISO_PARAMS}")
    return slopes[at]
