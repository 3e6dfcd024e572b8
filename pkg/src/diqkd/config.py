"""Flat key-value configuration: parsing, validation, and model builders.

One file defines the tiers, channel, timing, protocol, epsilons, penalties
and sweep grids (see data/default.cfg and docs/CONFIG.md). Keys are dotted
section names; values are numbers, names, or comma-separated lists.
"""

from __future__ import annotations

import hashlib
import importlib.resources
from dataclasses import dataclass
from pathlib import Path

from .errors import ModelError
from .hardware import (
    BraidSchedule,
    DegenerateDwell,
    ErrorBudget,
    ExponentialDwell,
    TimingModel,
    Tier,
    dwell_time,
)
from .protocol import ChannelModel, ProtocolConfig
from .security import EpsilonBudget, PenaltyConfig

TIER_NAMES = ("conservative", "target", "optimistic")

_TIER_FIELDS = ("p_r", "p_b", "gamma_p", "zeta", "p_dep", "delta_cal")

_KNOWN_KEYS = frozenset(
    [f"tier.{t}.{f}" for t in TIER_NAMES for f in _TIER_FIELDS]
    + [
        "channel.alpha_db_per_km",
        "channel.eta_det",
        "channel.bsm_factor",
        "channel.false_herald_rate",
        "timing.c_fiber",
        "timing.t_braid",
        "timing.t_readout",
        "timing.tau_overhead",
        "timing.tau_max",
        "timing.dwell",
        "schedule.m_00",
        "schedule.m_01",
        "schedule.m_10",
        "schedule.m_11",
        "schedule.m_key",
        "protocol.gamma",
        "protocol.gamma_min",
        "protocol.gamma_max",
        "protocol.block_size_N",
        "protocol.subblock_count",
        "protocol.R0",
        "penalty.lambda_coeff",
        "penalty.delta_eta_max",
        "epsilon.total",
        "security.f_EC",
        "security.v",
        "security.C_EAT",
        "sweep.blocksize.L_km",
        "sweep.blocksize.n_min",
        "sweep.blocksize.n_max",
        "sweep.blocksize.points_per_decade",
        "sweep.distance.L_max_km",
        "sweep.distance.step_km",
        "sweep.distance.attempts",
        "sweep.landscape.L_km",
        "sweep.landscape.grid",
        "sweep.landscape.p_r_min",
        "sweep.landscape.p_r_max",
        "sweep.landscape.gamma_p_min",
        "sweep.landscape.gamma_p_max",
        "sweep.multiplex.L_km",
        "sweep.multiplex.k",
        "sweep.multiplex.attempts",
    ]
)


def parse_config_text(text: str) -> dict[str, str]:
    """Parse "dotted.key = value" lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ModelError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ModelError(f"config line {lineno}: unknown key {key!r}")
        if not value:
            raise ModelError(f"config line {lineno}: empty value for {key!r}")
        out[key] = value
    return out


def default_config_text() -> str:
    return (
        importlib.resources.files("diqkd.data").joinpath("default.cfg").read_text()
    )


@dataclass(frozen=True)
class Config:
    """Parsed configuration plus typed accessors and model builders."""

    values: dict
    source_text: str
    path: str | None = None

    # -- typed getters ------------------------------------------------------

    def get(self, key: str, default=None) -> str | None:
        return self.values.get(key, default)

    def get_float(self, key: str, default: float | None = None) -> float:
        raw = self.values.get(key)
        if raw is None:
            if default is None:
                raise ModelError(f"missing required config key {key!r}")
            return default
        try:
            return float(raw)
        except ValueError as exc:
            raise ModelError(f"config key {key!r}: not a number: {raw!r}") from exc

    def get_int(self, key: str, default: int | None = None) -> int:
        return int(self.get_float(key, None if default is None else float(default)))

    def get_floats(self, key: str, default: tuple[float, ...]) -> tuple[float, ...]:
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return tuple(float(part) for part in raw.split(","))
        except ValueError as exc:
            raise ModelError(f"config key {key!r}: not a number list: {raw!r}") from exc

    # -- builders -----------------------------------------------------------

    def tier(self, name: str) -> Tier:
        key = name.lower()
        if key not in TIER_NAMES:
            raise ModelError(f"unknown tier {name!r}; expected one of {TIER_NAMES}")
        fields = {f: self.get_float(f"tier.{key}.{f}") for f in _TIER_FIELDS}
        return Tier(name=key, budget=ErrorBudget(**fields))

    def tiers(self) -> tuple[Tier, ...]:
        return tuple(self.tier(n) for n in TIER_NAMES)

    def channel(self, tier: Tier) -> ChannelModel:
        false_rate = self.get_float("channel.false_herald_rate", tier.budget.zeta)
        return ChannelModel(
            alpha_db_per_km=self.get_float("channel.alpha_db_per_km", 0.2),
            eta_det=self.get_float("channel.eta_det", 0.9),
            false_herald_rate=false_rate,
            bsm_factor=self.get_float("channel.bsm_factor", 0.5),
        )

    def timing(self, L_km: float = 0.0) -> TimingModel:
        base = dict(
            L=L_km * 1000.0,
            c_fiber=self.get_float("timing.c_fiber", 2e8),
            t_braid=self.get_float("timing.t_braid", 0.0),
            t_readout=self.get_float("timing.t_readout", 0.0),
            tau_overhead=self.get_float("timing.tau_overhead", 0.0),
        )
        tau = (
            base["L"] / base["c_fiber"]
            + base["t_braid"]
            + base["t_readout"]
            + base["tau_overhead"]
        )
        # The discard cutoff never undercuts the operating point's mean dwell.
        tau_max = max(self.get_float("timing.tau_max", 1.0), tau)
        kind = self.get("timing.dwell", "degenerate")
        if kind == "degenerate":
            dwell = None
        elif kind == "exponential":
            dwell = ExponentialDwell(mean=tau)
            tau_max = max(tau_max, tau)
        else:
            raise ModelError(f"timing.dwell must be degenerate or exponential, got {kind!r}")
        return TimingModel(tau_max=tau_max, dwell_dist=dwell, **base)

    def schedule(self) -> BraidSchedule:
        return BraidSchedule(
            m_xy=(
                self.get_int("schedule.m_00", 0),
                self.get_int("schedule.m_01", 2),
                self.get_int("schedule.m_10", 2),
                self.get_int("schedule.m_11", 2),
            ),
            m_key=self.get_int("schedule.m_key", 0),
        )

    def protocol(self, seed: int = 0) -> ProtocolConfig:
        return ProtocolConfig(
            gamma=self.get_float("protocol.gamma", 0.1),
            gamma_min=self.get_float("protocol.gamma_min", 0.05),
            gamma_max=self.get_float("protocol.gamma_max", 0.5),
            block_size_N=self.get_int("protocol.block_size_N", 1_000_000),
            subblock_count=self.get_int("protocol.subblock_count", 16),
            delta_eta_max=self.get_float("penalty.delta_eta_max", 0.02),
            R0=self.get_float("protocol.R0", 1e6),
            rng_seed=seed,
        )

    def epsilons(self) -> EpsilonBudget:
        return EpsilonBudget.equal_split(self.get_float("epsilon.total", 1e-10))

    def penalty(self, tier: Tier) -> PenaltyConfig:
        return PenaltyConfig(
            lambda_coeff=self.get_float("penalty.lambda_coeff", 8.0),
            delta_eta_max=self.get_float("penalty.delta_eta_max", 0.02),
            delta_cal=tier.budget.delta_cal,
        )

    @property
    def f_EC(self) -> float:
        return self.get_float("security.f_EC", 1.16)

    @property
    def v(self) -> float | None:
        return self.get_float("security.v") if "security.v" in self.values else None

    @property
    def C_EAT(self) -> float | None:
        return (
            self.get_float("security.C_EAT") if "security.C_EAT" in self.values else None
        )

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()


def load_config(path: str | Path | None = None) -> Config:
    """Load a preset file; None loads the packaged default."""
    if path is None:
        text = default_config_text()
        name = None
    else:
        text = Path(path).read_text()
        name = str(path)
    cfg = Config(values=parse_config_text(text), source_text=text, path=name)
    _sanity_check(cfg)
    return cfg


def _sanity_check(cfg: Config) -> None:
    for name in TIER_NAMES:
        cfg.tier(name)  # raises on malformed budgets / pinned-field mismatch
    gamma = cfg.get_float("protocol.gamma", 0.1)
    if not 0.0 < gamma < 1.0:
        raise ModelError("protocol.gamma must lie in (0, 1)")
    if cfg.get_float("epsilon.total", 1e-10) <= 0:
        raise ModelError("epsilon.total must be > 0")


def dwell_seconds(cfg: Config, L_km: float) -> float:
    """Mean dwell time at distance L_km under the configured timing."""
    return dwell_time(cfg.timing(L_km))
