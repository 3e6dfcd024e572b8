"""Finite-key security chain for the penalized CHSH parameter.

Implements the statistical penalty (Hoeffding), the loss-discipline penalty,
the linear min-tradeoff minorant of the asymptotic rate curve, the
entropy-accumulation min-entropy bound, and the extractable key length

    ell = n * r(S_final) - leak_EC - Delta_finite - log2(1/(eps_PA * eps_EC))

with r(S) = 1 - h((1 + sqrt((S/2)^2 - 1))/2), leak_EC = n * h(Q) * f_EC and
Delta_finite = sqrt(n) * v * sqrt(2 ln(1/eps_s)) + C_EAT.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple

from .errors import InsufficientStatistics
from .hardware import TSIRELSON

_REL_SLACK = 1e-12  # decimal-to-binary dust on epsilon sums


@dataclass(frozen=True)
class EpsilonBudget:
    """Composable failure-probability split.

    eps_PE + eps_EAT + eps_EC + eps_PA + eps_auth must not exceed eps_tot,
    eps_s (smoothing) must not exceed eps_EAT, and all terms are positive.
    """

    eps_PE: float
    eps_EAT: float
    eps_s: float
    eps_EC: float
    eps_PA: float
    eps_auth: float
    eps_tot: float

    def __post_init__(self) -> None:
        parts = (self.eps_PE, self.eps_EAT, self.eps_EC, self.eps_PA, self.eps_auth)
        if any(p <= 0 for p in parts) or self.eps_s <= 0 or self.eps_tot <= 0:
            raise ValueError("all epsilons must be strictly positive")
        if math.fsum(parts) > self.eps_tot * (1.0 + _REL_SLACK):
            raise ValueError("epsilon components exceed eps_tot")
        if self.eps_s > self.eps_EAT * (1.0 + _REL_SLACK):
            raise ValueError("eps_s must not exceed eps_EAT")

    @classmethod
    def equal_split(cls, eps_tot: float = 1e-10) -> "EpsilonBudget":
        """Equal five-way split, with eps_s = eps_EAT."""
        e = eps_tot / 5.0
        return cls(
            eps_PE=e, eps_EAT=e, eps_s=e, eps_EC=e, eps_PA=e, eps_auth=e, eps_tot=eps_tot
        )


@dataclass(frozen=True)
class PenaltyConfig:
    """Loss-discipline penalty: Lambda = lambda_coeff * delta_eta, abort above delta_eta_max."""

    lambda_coeff: float = 8.0
    delta_eta_max: float = 0.02
    delta_cal: float = 0.0

    def __post_init__(self) -> None:
        if self.lambda_coeff < 0 or self.delta_eta_max < 0 or self.delta_cal < 0:
            raise ValueError("penalty parameters must be >= 0")
        if self.delta_eta_max > 0.5:
            raise ValueError("delta_eta_max must be <= 0.5")


def binary_entropy(q: float) -> float:
    """Binary entropy h(q) in bits, with h(0) = h(1) = 0."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q!r}")
    if q == 0.0 or q == 1.0:
        return 0.0
    return -q * math.log2(q) - (1.0 - q) * math.log2(1.0 - q)


def asymptotic_rate(S: float) -> float:
    """Asymptotic secret fraction 1 - h((1 + sqrt((S/2)^2 - 1))/2).

    0 at the classical bound S = 2, 1 at the Tsirelson bound; S below 2
    yields 0, S above 2*sqrt(2) is a domain error (super-quantum input).
    """
    if S > TSIRELSON * (1.0 + 1e-12):
        raise ValueError(f"S={S!r} exceeds the Tsirelson bound")
    if S <= 2.0:
        return 0.0
    u = math.sqrt(max((S / 2.0) ** 2 - 1.0, 0.0))
    phi = min((1.0 + u) / 2.0, 1.0)
    return 1.0 - binary_entropy(phi)


def rate_slope(S: float) -> float:
    """Analytic derivative of asymptotic_rate on (2, 2*sqrt(2))."""
    if not 2.0 < S < TSIRELSON:
        raise ValueError("slope defined on the open interval (2, 2*sqrt(2))")
    u = math.sqrt((S / 2.0) ** 2 - 1.0)
    phi = (1.0 + u) / 2.0
    return math.log2(phi / (1.0 - phi)) * S / (8.0 * u)


@dataclass(frozen=True)
class MinTradeoff:
    """Linear minorant g(S) = slope * S + intercept of the asymptotic rate curve."""

    slope: float
    intercept: float
    tangent_point: float

    def __call__(self, S: float) -> float:
        return self.slope * S + self.intercept


def build_min_tradeoff(tangent_S: float) -> MinTradeoff:
    """Tangent line to asymptotic_rate at tangent_S in the open interval (2, 2*sqrt(2)).

    Convexity of the rate curve makes any interior tangent a minorant over
    the whole interval (audited on a grid in the tests).
    """
    if not 2.0 < tangent_S < TSIRELSON:
        raise ValueError(
            "degenerate tangent: tangent_S must lie strictly inside (2, 2*sqrt(2))"
        )
    slope = rate_slope(tangent_S)
    intercept = asymptotic_rate(tangent_S) - slope * tangent_S
    return MinTradeoff(slope=slope, intercept=intercept, tangent_point=tangent_S)


def hoeffding_mu(M_test: int, eps_PE: float) -> float:
    """Hoeffding deviation for the CHSH estimate from M_test test rounds.

    The per-round CHSH score is treated as a range-[-4, 4] variable, giving
    mu = 8 * sqrt(ln(1/eps_PE) / (2 M_test)).
    """
    if M_test < 1:
        raise InsufficientStatistics("hoeffding_mu needs at least one test round")
    if not 0.0 < eps_PE < 1.0:
        raise ValueError("eps_PE must lie in (0, 1)")
    # Expression order matters: the 2*M denominator keeps the quarter-sample
    # doubling identity bit-exact.
    return 8.0 * math.sqrt(math.log(1.0 / eps_PE) / (2.0 * M_test))


class LambdaPenalty(NamedTuple):
    value: float
    abort: bool


def loss_penalty(delta_eta: float, config: PenaltyConfig) -> LambdaPenalty:
    """Loss-discipline penalty Lambda(delta_eta); abort flag above the threshold.

    The abort is a distinguished outcome, not an exception.
    """
    if not 0.0 <= delta_eta <= 0.5:
        raise ValueError("delta_eta must lie in [0, 0.5]")
    return LambdaPenalty(
        value=config.lambda_coeff * delta_eta,
        abort=delta_eta > config.delta_eta_max,
    )


def penalize_S(S_hat: float, mu: float, Lambda: float, delta_cal: float) -> float:
    """Penalized Bell parameter S_hat - mu - Lambda - 4*delta_cal."""
    if mu < 0 or Lambda < 0 or delta_cal < 0:
        raise ValueError("penalties must be >= 0")
    return S_hat - mu - Lambda - 4.0 * delta_cal


def default_v(tradeoff: MinTradeoff) -> float:
    """Default EAT variance proxy: 2 * (1 + |slope|) of the active tradeoff line."""
    return 2.0 * (1.0 + abs(tradeoff.slope))


def default_c_eat(eps_EAT: float) -> float:
    """Default alphabet-overhead constant log2(1/eps_EAT) + 2*log2(5)."""
    return math.log2(1.0 / eps_EAT) + 2.0 * math.log2(5.0)


def eat_min_entropy(
    n: int,
    S_final: float,
    tradeoff: MinTradeoff,
    v: float,
    eps_s: float,
    C_EAT: float,
) -> float:
    """Smooth min-entropy bound n*g(S_final) - sqrt(n)*v*sqrt(2 ln(1/eps_s)) - C_EAT.

    May be negative; callers clamp.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if v <= 0:
        raise ValueError("v must be > 0")
    second_order = math.sqrt(n) * v * math.sqrt(2.0 * math.log(1.0 / eps_s))
    return n * tradeoff(S_final) - second_order - C_EAT


def qber_from_visibility(V: float) -> float:
    """Werner-state key-basis error rate Q = (1 - V) / 2."""
    if not 0.0 <= V <= 1.0:
        raise ValueError("V must lie in [0, 1]")
    return (1.0 - V) / 2.0


def s_from_visibility(V: float) -> float:
    """CHSH value of a Werner state at optimal settings: S = 2*sqrt(2)*V."""
    if not 0.0 <= V <= 1.0:
        raise ValueError("V must lie in [0, 1]")
    return TSIRELSON * V


@dataclass(frozen=True)
class KeyLengthReport:
    """Every intermediate of the key-length computation, plus context flags."""

    n: int
    S_hat: float
    mu: float
    Lambda: float
    S_final: float
    H_min_bound: float
    leak_EC: float
    Delta_finite: float
    ell: float
    rate_per_round: float
    rate_bps: float
    abort: bool = False
    abort_reason: str | None = None
    no_violation: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "KeyLengthReport":
        return replace(self, **changes)


def key_length(
    n: int,
    S_final: float,
    Q: float,
    f_EC: float,
    eps: EpsilonBudget,
    v: float | None = None,
    C_EAT: float | None = None,
    *,
    tradeoff: MinTradeoff | None = None,
    attempts: int | None = None,
    duration_s: float | None = None,
) -> KeyLengthReport:
    """Extractable key length after privacy amplification.

    ell = max(0, n * r(S_final) - n*h(Q)*f_EC - Delta_finite
                 - log2(1/(eps_PA * eps_EC)))
    clamped to [0, n]. S_final at or below the classical bound yields ell = 0
    with the no_violation flag. The tradeoff line (tangent at S_final unless
    given) supplies the H_min bound and the default variance proxy.

    attempts/duration_s contextualize the rates: rate_per_round is per
    protocol attempt when attempts is given (per raw-key round otherwise).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= Q <= 0.5:
        raise ValueError("Q must lie in [0, 0.5]")
    if f_EC < 1.0:
        raise ValueError("f_EC must be >= 1")

    no_violation = S_final <= 2.0
    if tradeoff is None and not no_violation:
        tangent = min(max(S_final, 2.0 + 1e-9), TSIRELSON - 1e-9)
        tradeoff = build_min_tradeoff(tangent)
    if v is None:
        v = default_v(tradeoff) if tradeoff is not None else 2.0
    if C_EAT is None:
        C_EAT = default_c_eat(eps.eps_EAT)

    second_order = math.sqrt(n) * v * math.sqrt(2.0 * math.log(1.0 / eps.eps_s))
    delta_finite = second_order + C_EAT
    leak_ec = n * binary_entropy(Q) * f_EC
    pa_ec_term = math.log2(1.0 / (eps.eps_PA * eps.eps_EC))

    if no_violation:
        yield_bits = 0.0
        h_min = n * tradeoff(S_final) - delta_finite if tradeoff else -delta_finite
        ell = 0.0
    else:
        rate = asymptotic_rate(min(S_final, TSIRELSON))
        yield_bits = n * rate
        h_min = n * tradeoff(S_final) - delta_finite
        ell = max(0.0, yield_bits - leak_ec - delta_finite - pa_ec_term)
    ell = min(float(math.floor(ell)), float(n))

    rate_per_round = ell / attempts if attempts else ell / n
    rate_bps = ell / duration_s if duration_s else 0.0
    return KeyLengthReport(
        n=n,
        S_hat=S_final,
        mu=0.0,
        Lambda=0.0,
        S_final=S_final,
        H_min_bound=h_min,
        leak_EC=leak_ec,
        Delta_finite=delta_finite,
        ell=ell,
        rate_per_round=rate_per_round,
        rate_bps=rate_bps,
        no_violation=no_violation,
    )
