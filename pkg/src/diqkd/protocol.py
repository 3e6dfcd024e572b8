"""Heralded-round protocol Monte Carlo engine.

Simulates blocks of entanglement attempts: heralding through the lossy
midpoint station, false heralds, watchdog discards of flagged idle-time
poisoning, biased test/key selection, Werner-state outcome sampling at
CHSH-optimal settings with per-party readout misassignment, per-setting
erasures, and the loss-discipline audit. Produces BlockTally records and,
through run_protocol, a full KeyLengthReport.

Determinism: every stream is derived from (rng_seed, block_index,
chain_index) and draws happen in a fixed order (herald, false herald,
watchdog, round type, x, y, outcome bit, correlation bit, Alice flip, Bob
flip, erasure), so identical seeds and configs give bit-identical tallies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import InsufficientStatistics, ModelError
from .hardware import (
    BraidSchedule,
    ErrorBudget,
    TimingModel,
    mean_poisoning_prob,
    poisoning_flip_prob,
)
from .security import (
    EpsilonBudget,
    KeyLengthReport,
    PenaltyConfig,
    hoeffding_mu,
    key_length,
    loss_penalty,
    penalize_S,
)

#: Ideal correlator signs at the CHSH-optimal angles; magnitude 1/sqrt(2).
_E_SIGNS = np.array([[1.0, 1.0], [1.0, -1.0]])
_INV_SQRT2 = 1.0 / math.sqrt(2.0)

_MAX_SIM_ATTEMPTS = 100_000_000  # simulate in memory; use analytic mode beyond


@dataclass(frozen=True)
class ChannelModel:
    """Photonic link + midpoint BSM station."""

    alpha_db_per_km: float = 0.2
    eta_det: float = 0.9
    false_herald_rate: float = 0.0
    bsm_factor: float = 0.5  # two-photon coincidence ceiling

    def __post_init__(self) -> None:
        if self.alpha_db_per_km < 0:
            raise ValueError("alpha_db_per_km must be >= 0")
        if not 0.0 < self.eta_det <= 1.0:
            raise ValueError("eta_det must lie in (0, 1]")
        if not 0.0 <= self.false_herald_rate < 1.0:
            raise ValueError("false_herald_rate must lie in [0, 1)")
        if self.bsm_factor < 0:
            raise ValueError("bsm_factor must be >= 0")

    def replace(self, **changes) -> "ChannelModel":
        return replace(self, **changes)


@dataclass(frozen=True)
class ProtocolConfig:
    """Round-level protocol parameters."""

    gamma: float = 0.1
    gamma_min: float = 0.05
    gamma_max: float = 0.5
    block_size_N: int = 1_000_000  # attempts per block
    subblock_count: int = 16
    delta_eta_max: float = 0.02
    R0: float = 1.0e6  # attempts per second
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.gamma_min <= self.gamma <= self.gamma_max:
            raise ValueError("need gamma_min <= gamma <= gamma_max")
        if self.block_size_N < 1 or self.subblock_count < 1:
            raise ValueError("block_size_N and subblock_count must be >= 1")
        if self.delta_eta_max < 0 or self.R0 <= 0:
            raise ValueError("delta_eta_max >= 0 and R0 > 0 required")

    def replace(self, **changes) -> "ProtocolConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class PoisoningBurst:
    """Transient poisoning spike confined to one sub-block."""

    subblock: int
    gamma_p: float

    def __post_init__(self) -> None:
        if self.subblock < 0 or self.gamma_p < 0:
            raise ValueError("subblock index and gamma_p must be >= 0")


@dataclass(frozen=True)
class RoundRecord:
    """One protocol round. None encodes "not applicable" / the erasure outcome.

    Key rounds carry no (x, y); discarded rounds carry no outcomes.
    """

    round_type: str  # "key" | "test"
    x: int | None
    y: int | None
    a: int | None
    b: int | None
    heralded: bool
    watchdog_discard: bool
    erased: bool
    subblock_index: int

    def __post_init__(self) -> None:
        if self.round_type not in ("key", "test"):
            raise ValueError("round_type must be 'key' or 'test'")
        if self.round_type == "key" and (self.x is not None or self.y is not None):
            raise ValueError("key rounds carry no settings")
        if (self.watchdog_discard or not self.heralded) and self.a is not None:
            raise ValueError("discarded rounds carry no outcomes")


def _zeros(sb: int) -> dict:
    return {
        "test_counts": np.zeros((sb, 2, 2, 2, 2), dtype=np.int64),
        "heralded_xy": np.zeros((sb, 2, 2), dtype=np.int64),
        "erased_xy": np.zeros((sb, 2, 2), dtype=np.int64),
        "discard_xy": np.zeros((sb, 2, 2), dtype=np.int64),
        "key_agree": np.zeros(sb, dtype=np.int64),
        "key_disagree": np.zeros(sb, dtype=np.int64),
        "heralded_key": np.zeros(sb, dtype=np.int64),
        "erased_key": np.zeros(sb, dtype=np.int64),
        "discard_key": np.zeros(sb, dtype=np.int64),
        "attempts": np.zeros(sb, dtype=np.int64),
        "false_heralds": np.zeros(sb, dtype=np.int64),
    }


@dataclass
class BlockTally:
    """Per-sub-block outcome accounting for one protocol block.

    Conservation (per setting and in total): heralded = detected + erased
    + discarded. Merging is element-wise addition, hence associative and
    order-independent.
    """

    test_counts: np.ndarray  # (sb, x, y, a, b)
    heralded_xy: np.ndarray  # (sb, 2, 2)
    erased_xy: np.ndarray
    discard_xy: np.ndarray
    key_agree: np.ndarray  # (sb,)
    key_disagree: np.ndarray
    heralded_key: np.ndarray
    erased_key: np.ndarray
    discard_key: np.ndarray
    attempts: np.ndarray
    false_heralds: np.ndarray
    records: list[RoundRecord] | None = field(default=None, repr=False)

    _ARRAYS = (
        "test_counts",
        "heralded_xy",
        "erased_xy",
        "discard_xy",
        "key_agree",
        "key_disagree",
        "heralded_key",
        "erased_key",
        "discard_key",
        "attempts",
        "false_heralds",
    )

    @classmethod
    def empty(cls, subblock_count: int) -> "BlockTally":
        return cls(**_zeros(subblock_count))

    @property
    def subblock_count(self) -> int:
        return int(self.attempts.shape[0])

    @property
    def attempts_total(self) -> int:
        return int(self.attempts.sum())

    @property
    def heralded_total(self) -> int:
        return int(self.heralded_xy.sum() + self.heralded_key.sum())

    @property
    def detected_xy(self) -> np.ndarray:
        """Detected (non-erased, non-discarded) test counts per sub-block and setting."""
        return self.heralded_xy - self.erased_xy - self.discard_xy

    @property
    def detected_key(self) -> np.ndarray:
        return self.heralded_key - self.erased_key - self.discard_key

    @property
    def detected_total(self) -> int:
        return int(self.detected_xy.sum() + self.detected_key.sum())

    @property
    def erasures_total(self) -> int:
        return int(self.erased_xy.sum() + self.erased_key.sum())

    @property
    def discards_total(self) -> int:
        return int(self.discard_xy.sum() + self.discard_key.sum())

    @property
    def is_empty(self) -> bool:
        return self.heralded_total == 0

    def merge(self, other: "BlockTally") -> "BlockTally":
        if self.subblock_count != other.subblock_count:
            raise ValueError("can only merge tallies with matching sub-block structure")
        return BlockTally(
            **{n: getattr(self, n) + getattr(other, n) for n in self._ARRAYS}
        )

    def select_subblocks(self, indices: Sequence[int]) -> "BlockTally":
        idx = np.asarray(sorted(indices), dtype=int)
        return BlockTally(**{n: getattr(self, n)[idx].copy() for n in self._ARRAYS})

    def equals(self, other: "BlockTally") -> bool:
        return all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in self._ARRAYS
        )

    def to_dict(self) -> dict:
        return {n: getattr(self, n).tolist() for n in self._ARRAYS}


def herald_probability(L_km: float, channel: ChannelModel) -> float:
    """Probability one attempt yields a midpoint herald at fiber distance L_km.

    bsm_factor * eta_det^2 * 10^(-alpha L / 10): each photon travels L/2, so
    the pair attenuation totals the full-path loss.
    """
    if L_km < 0:
        raise ValueError("L_km must be >= 0")
    return channel.bsm_factor * channel.eta_det**2 * 10.0 ** (
        -channel.alpha_db_per_km * L_km / 10.0
    )


def _normalize_readout_fail(
    readout_fail: float | Mapping,
) -> tuple[np.ndarray, float]:
    if isinstance(readout_fail, Mapping):
        fail_xy = np.zeros((2, 2))
        for (key, val) in readout_fail.items():
            if key == "key":
                continue
            fail_xy[key] = val
        fail_key = float(readout_fail.get("key", 0.0))
    else:
        fail_xy = np.full((2, 2), float(readout_fail))
        fail_key = float(readout_fail)
    if fail_xy.min() < 0 or fail_xy.max() >= 1 or not 0 <= fail_key < 1:
        raise ValueError("readout failure probabilities must lie in [0, 1)")
    return fail_xy, fail_key


def simulate_block(
    config: ProtocolConfig,
    budget: ErrorBudget,
    timing: TimingModel,
    schedule: BraidSchedule,
    channel: ChannelModel,
    *,
    readout_fail: float | Mapping = 0.0,
    burst: PoisoningBurst | None = None,
    block_index: int = 0,
    chain_index: int = 0,
    keep_records: bool = False,
) -> BlockTally:
    """Simulate one block of config.block_size_N attempts.

    Per heralded attempt: false-herald replacement (uncorrelated pair),
    watchdog discard with probability 1 - exp(-gamma_p * tau), biased
    test/key selection, uniform settings, Werner-state outcomes at the
    per-setting visibility, per-party readout flips, per-setting erasure.
    """
    n_att = config.block_size_N
    if n_att > _MAX_SIM_ATTEMPTS:
        raise ValueError(
            f"block_size_N={n_att} too large to simulate in memory; use analytic mode"
        )
    sb = config.subblock_count
    rng = np.random.default_rng(
        np.random.SeedSequence([int(config.rng_seed), block_index, chain_index])
    )
    tally = BlockTally.empty(sb)

    L_km = timing.L / 1000.0
    p_herald = herald_probability(L_km, channel)
    dwell = timing.dwell_distribution()
    tau = dwell.truncated_mean(timing.tau_max)
    p_bar = mean_poisoning_prob(budget.gamma_p, dwell, timing.tau_max)
    p_watch = poisoning_flip_prob(budget.gamma_p, tau) * 2.0  # 1 - exp(-gamma*tau)
    if burst is not None:
        if burst.subblock >= sb:
            raise ValueError("burst sub-block index out of range")
        p_bar_burst = mean_poisoning_prob(burst.gamma_p, dwell, timing.tau_max)
        p_watch_burst = poisoning_flip_prob(burst.gamma_p, tau) * 2.0

    fail_xy, fail_key = _normalize_readout_fail(readout_fail)

    # Per-setting state visibility: in-window poisoning, depolarization and
    # braid depth; readout flips are applied to the sampled bits below.
    def state_vis(p_poison: float) -> tuple[np.ndarray, float]:
        base = (1.0 - 2.0 * p_poison) * (1.0 - budget.p_dep)
        v_xy = base * (1.0 - budget.p_b) ** np.array(schedule.m_xy).reshape(2, 2)
        v_key = base * (1.0 - budget.p_b) ** schedule.m_key
        return v_xy, v_key

    v_xy, v_key = state_vis(p_bar)
    if burst is not None:
        v_xy_burst, v_key_burst = state_vis(p_bar_burst)

    sb_index_all = (np.arange(n_att, dtype=np.int64) * sb) // n_att
    np.add.at(tally.attempts, sb_index_all, 1)

    # Fixed draw order; each stage draws over the heralded subset.
    heralded = rng.random(n_att) < p_herald
    sb_idx = sb_index_all[heralded]
    nh = int(sb_idx.size)
    if nh == 0:
        if keep_records:
            tally.records = []
        return tally

    false_h = rng.random(nh) < channel.false_herald_rate
    in_burst = (
        (sb_idx == burst.subblock) if burst is not None else np.zeros(nh, dtype=bool)
    )
    pw = np.where(in_burst, p_watch_burst, p_watch) if burst is not None else p_watch
    discarded = rng.random(nh) < pw
    is_test = rng.random(nh) < config.gamma
    x = rng.integers(0, 2, nh)
    y = rng.integers(0, 2, nh)

    # Outcome model: uniform marginal bit for Alice, correlation bit for Bob.
    e_state = np.where(
        is_test,
        (v_xy[x, y] if burst is None else np.where(in_burst, v_xy_burst[x, y], v_xy[x, y]))
        * _E_SIGNS[x, y]
        * _INV_SQRT2,
        (v_key if burst is None else np.where(in_burst, v_key_burst, v_key)),
    )
    e_state = np.where(false_h, 0.0, e_state)
    a = rng.integers(0, 2, nh)
    anti = rng.random(nh) < (1.0 - e_state) / 2.0
    b = a ^ anti
    a ^= rng.random(nh) < budget.p_r
    b ^= rng.random(nh) < budget.p_r
    erased = rng.random(nh) < np.where(is_test, fail_xy[x, y], fail_key)

    live = ~discarded
    detected = live & ~erased

    t = is_test
    k = ~is_test
    np.add.at(tally.heralded_xy, (sb_idx[t], x[t], y[t]), 1)
    np.add.at(tally.discard_xy, (sb_idx[t & discarded], x[t & discarded], y[t & discarded]), 1)
    te = t & live & erased
    np.add.at(tally.erased_xy, (sb_idx[te], x[te], y[te]), 1)
    td = t & detected
    np.add.at(tally.test_counts, (sb_idx[td], x[td], y[td], a[td], b[td]), 1)

    np.add.at(tally.heralded_key, sb_idx[k], 1)
    np.add.at(tally.discard_key, sb_idx[k & discarded], 1)
    np.add.at(tally.erased_key, sb_idx[k & live & erased], 1)
    kd = k & detected
    agree = a == b
    np.add.at(tally.key_agree, sb_idx[kd & agree], 1)
    np.add.at(tally.key_disagree, sb_idx[kd & ~agree], 1)
    np.add.at(tally.false_heralds, sb_idx[false_h], 1)

    if keep_records:
        tally.records = _materialize_records(
            sb_idx, is_test, x, y, a, b, discarded, erased
        )
    return tally


def _materialize_records(sb_idx, is_test, x, y, a, b, discarded, erased):
    records = []
    for i in range(sb_idx.size):
        disc = bool(discarded[i])
        test = bool(is_test[i])
        era = bool(erased[i]) and not disc
        keep_outcome = not disc and not era
        records.append(
            RoundRecord(
                round_type="test" if test else "key",
                x=int(x[i]) if test else None,
                y=int(y[i]) if test else None,
                a=int(a[i]) if keep_outcome else None,
                b=int(b[i]) if keep_outcome else None,
                heralded=True,
                watchdog_discard=disc,
                erased=era,
                subblock_index=int(sb_idx[i]),
            )
        )
    return records


def tally_records(
    records: Iterable[RoundRecord], subblock_count: int
) -> BlockTally:
    """Accumulate a BlockTally from explicit round records (synthetic data)."""
    tally = BlockTally.empty(subblock_count)
    for r in records:
        i = r.subblock_index
        tally.attempts[i] += 1
        if not r.heralded:
            continue
        if r.round_type == "test":
            tally.heralded_xy[i, r.x, r.y] += 1
            if r.watchdog_discard:
                tally.discard_xy[i, r.x, r.y] += 1
            elif r.erased:
                tally.erased_xy[i, r.x, r.y] += 1
            else:
                tally.test_counts[i, r.x, r.y, r.a, r.b] += 1
        else:
            tally.heralded_key[i] += 1
            if r.watchdog_discard:
                tally.discard_key[i] += 1
            elif r.erased:
                tally.erased_key[i] += 1
            elif r.a == r.b:
                tally.key_agree[i] += 1
            else:
                tally.key_disagree[i] += 1
    return tally


class ChshStatistics(NamedTuple):
    """Plug-in CHSH estimate and the loss-discipline efficiencies."""

    S_hat: float
    E_xy: np.ndarray  # (2, 2)
    eta_xy: np.ndarray  # (2, 2), detected / heralded per test setting
    eta_bar: float
    delta_eta: float
    sigma_S: float  # multinomial delta-method standard error of S_hat
    n_test_detected: int
    n_key_detected: int
    n_detected: int
    qber_key: float | None


def estimate_chsh(tally: BlockTally) -> ChshStatistics:
    """Correlators, S_hat = E00 + E01 + E10 - E11, and efficiency asymmetry.

    Erasures and discards are excluded from the correlator numerators and
    denominators; they enter only through eta_xy.
    """
    counts = tally.test_counts.sum(axis=0)  # (x, y, a, b)
    det = counts.sum(axis=(2, 3))
    if (det == 0).any():
        raise InsufficientStatistics(
            "every test setting pair needs at least one detected event"
        )
    signs = np.array([[1.0, -1.0], [-1.0, 1.0]])  # (-1)^(a xor b)
    e_xy = (counts * signs).sum(axis=(2, 3)) / det
    s_hat = float(e_xy[0, 0] + e_xy[0, 1] + e_xy[1, 0] - e_xy[1, 1])
    var_s = float(((1.0 - e_xy**2) / det).sum())

    heralded = tally.heralded_xy.sum(axis=0)
    eta = np.divide(det, heralded, out=np.zeros((2, 2)), where=heralded > 0)
    eta_bar = float(eta.mean())
    delta_eta = float(np.abs(eta - eta_bar).max())

    agree = int(tally.key_agree.sum())
    disagree = int(tally.key_disagree.sum())
    n_key = agree + disagree
    qber = disagree / n_key if n_key > 0 else None
    n_test = int(det.sum())
    return ChshStatistics(
        S_hat=s_hat,
        E_xy=e_xy,
        eta_xy=eta,
        eta_bar=eta_bar,
        delta_eta=delta_eta,
        sigma_S=math.sqrt(var_s),
        n_test_detected=n_test,
        n_key_detected=n_key,
        n_detected=n_test + n_key,
        qber_key=qber,
    )


def audit_efficiencies(stats: ChshStatistics, config: PenaltyConfig) -> bool:
    """Block-wise loss-discipline audit: abort iff delta_eta exceeds the threshold.

    The threshold itself passes (inclusive).
    """
    return stats.delta_eta <= config.delta_eta_max


def adaptive_gamma(
    history: Sequence[float],
    current_gamma: float,
    config: ProtocolConfig,
    *,
    sigma_max: float = 0.05,
    grow: float = 1.5,
    decay: float = 0.9,
) -> float:
    """Update the test fraction from recent sub-block S_hat stability.

    Sample std above sigma_max grows gamma by 1.5x (capped at gamma_max);
    stable history decays it by 0.9x (floored at gamma_min). Fewer than two
    history entries leave gamma unchanged.
    """
    if len(history) < 2:
        return current_gamma
    std = float(np.std(np.asarray(history, dtype=float), ddof=1))
    if std > sigma_max:
        return min(config.gamma_max, grow * current_gamma)
    return max(config.gamma_min, decay * current_gamma)


class SalvageResult(NamedTuple):
    tally: BlockTally
    retention: float
    dropped: tuple[int, ...]


def salvage(tally: BlockTally, poisoning_threshold: float) -> SalvageResult:
    """Drop sub-blocks whose watchdog-discard fraction or key QBER exceeds the threshold.

    Returns the merged tally of survivors and the retained fraction of
    attempts. Dropping everything yields an empty tally (flagged via
    tally.is_empty).
    """
    if poisoning_threshold < 0:
        raise ValueError("poisoning_threshold must be >= 0")
    dropped = []
    for i in range(tally.subblock_count):
        heralded = int(tally.heralded_xy[i].sum() + tally.heralded_key[i])
        discards = int(tally.discard_xy[i].sum() + tally.discard_key[i])
        frac = discards / heralded if heralded > 0 else 0.0
        nk = int(tally.key_agree[i] + tally.key_disagree[i])
        qber = tally.key_disagree[i] / nk if nk > 0 else 0.0
        if frac > poisoning_threshold or qber > poisoning_threshold:
            dropped.append(i)
    keep = [i for i in range(tally.subblock_count) if i not in dropped]
    total = tally.attempts_total
    if not keep:
        return SalvageResult(
            BlockTally.empty(tally.subblock_count), 0.0, tuple(dropped)
        )
    survivor = tally.select_subblocks(keep)
    retention = survivor.attempts_total / total if total > 0 else 0.0
    return SalvageResult(survivor, retention, tuple(dropped))


def _abort_report(reason: str, S_hat: float = 0.0, n: int = 0) -> KeyLengthReport:
    return KeyLengthReport(
        n=n,
        S_hat=S_hat,
        mu=0.0,
        Lambda=0.0,
        S_final=0.0,
        H_min_bound=0.0,
        leak_EC=0.0,
        Delta_finite=0.0,
        ell=0.0,
        rate_per_round=0.0,
        rate_bps=0.0,
        abort=True,
        abort_reason=reason,
    )


def run_protocol(
    config: ProtocolConfig,
    budget: ErrorBudget,
    timing: TimingModel,
    schedule: BraidSchedule,
    channel: ChannelModel,
    eps: EpsilonBudget,
    penalty: PenaltyConfig,
    *,
    f_EC: float = 1.16,
    v: float | None = None,
    C_EAT: float | None = None,
    k_chains: int = 1,
    salvage_threshold: float | None = 0.2,
    readout_fail: float | Mapping = 0.0,
    burst: PoisoningBurst | None = None,
    block_index: int = 0,
    chain_index: int = 0,
) -> KeyLengthReport:
    """Full pipeline: simulate, salvage, estimate, audit, penalize, extract.

    Raw-key accounting n = (1 - gamma) * M with M the detected rounds; the
    Hoeffding deviation uses the observed test-round count. Multiplexing by
    k_chains multiplies the final rate (linearity before post-processing
    caps); the reported ell stays per chain.
    """
    if k_chains < 1:
        raise ValueError("k_chains must be >= 1")
    tally = simulate_block(
        config,
        budget,
        timing,
        schedule,
        channel,
        readout_fail=readout_fail,
        burst=burst,
        block_index=block_index,
        chain_index=chain_index,
    )
    if salvage_threshold is not None:
        tally = salvage(tally, salvage_threshold).tally
    return postprocess_tally(
        tally,
        config,
        budget,
        eps,
        penalty,
        f_EC=f_EC,
        v=v,
        C_EAT=C_EAT,
        k_chains=k_chains,
    )


def postprocess_tally(
    tally: BlockTally,
    config: ProtocolConfig,
    budget: ErrorBudget,
    eps: EpsilonBudget,
    penalty: PenaltyConfig,
    *,
    f_EC: float = 1.16,
    v: float | None = None,
    C_EAT: float | None = None,
    k_chains: int = 1,
) -> KeyLengthReport:
    """Sifting, audit and key extraction for an already-simulated tally."""
    duration = config.block_size_N / config.R0
    if tally.is_empty:
        return _abort_report("empty tally: no heralded rounds survived")
    try:
        stats = estimate_chsh(tally)
    except InsufficientStatistics as exc:
        return _abort_report(f"insufficient statistics: {exc}")

    if not audit_efficiencies(stats, penalty):
        return _abort_report(
            f"efficiency audit: delta_eta={stats.delta_eta:.4f} above "
            f"{penalty.delta_eta_max}",
            S_hat=stats.S_hat,
        )

    lam = loss_penalty(stats.delta_eta, penalty)
    mu = hoeffding_mu(stats.n_test_detected, eps.eps_PE)
    s_final = penalize_S(stats.S_hat, mu, lam.value, budget.delta_cal)

    n = int((1.0 - config.gamma) * stats.n_detected)
    if n < 1 or stats.qber_key is None:
        return _abort_report("no raw key rounds", S_hat=stats.S_hat)
    q = min(stats.qber_key, 0.5)

    report = key_length(
        n,
        s_final,
        q,
        f_EC,
        eps,
        v,
        C_EAT,
        attempts=config.block_size_N,
        duration_s=duration,
    )
    return report.replace(
        S_hat=stats.S_hat,
        mu=mu,
        Lambda=lam.value,
        rate_bps=report.rate_bps * k_chains,
    )
