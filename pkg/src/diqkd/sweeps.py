"""Sweep harness: finite-size scaling, distance-throughput, error landscape,
multiplexing, plus the distance-cutoff finders.

Two evaluation modes exist per row: "analytic" evaluates the closed-form
V -> S -> ell chain (fast, wide grids); "simulate" drives the Monte Carlo
protocol engine for validation rows. The analytic chain uses the
product/anisotropic visibility (per-party readout, per-setting braid depth,
false-herald and depolarization factors), which is what the simulator's
estimator converges to; the landscape sweep uses the isotropic regime,
whose sensitivity slopes are the published ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import TIER_NAMES, Config
from .errors import InsufficientStatistics
from .hardware import (
    TSIRELSON,
    chsh_anisotropic_lower_bound,
    dwell_time,
    mean_poisoning_prob,
    poisoning_flip_prob,
    visibility_isotropic,
)
from .protocol import (
    estimate_chsh,
    herald_probability,
    postprocess_tally,
    salvage,
    simulate_block,
)
from .security import hoeffding_mu, key_length, penalize_S

CSV_COLUMNS = {
    "blocksize": ("tier", "N", "L_km", "S_final", "n", "ell", "rate_per_round", "rate_bps", "abort"),
    "distance": ("tier", "L_km", "tau_s", "V_eff", "S_analytic", "S_final", "Q", "ell", "rate_bps", "abort"),
    "landscape": ("p_r", "gamma_p", "L_km", "V_eff", "S"),
    "multiplex": ("tier", "k", "L_km", "rate_bps"),
}


@dataclass(frozen=True)
class SweepSpec:
    """One sweep request: kind, tier selection, seed, mode and overrides."""

    kind: str  # blocksize | distance | landscape | multiplex
    tier: str | None = None  # None = all tiers (landscape: target)
    seed: int = 0
    mode: str = "analytic"
    L_km: float | None = None
    out: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in CSV_COLUMNS:
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        if self.mode not in ("analytic", "simulate"):
            raise ValueError("mode must be 'analytic' or 'simulate'")


@dataclass(frozen=True)
class OperatingPoint:
    """Closed-form per-(tier, L) quantities feeding the analytic key chain."""

    tier: str
    L_km: float
    tau_s: float
    p_bar_p: float
    p_watch: float
    p_herald: float
    S_analytic: float
    V_eff: float
    Q: float


def operating_point(cfg: Config, tier_name: str, L_km: float) -> OperatingPoint:
    tier = cfg.tier(tier_name)
    budget = tier.budget
    timing = cfg.timing(L_km)
    schedule = cfg.schedule()
    channel = cfg.channel(tier)

    dwell = timing.dwell_distribution()
    tau = dwell.truncated_mean(timing.tau_max)
    p_bar = mean_poisoning_prob(budget.gamma_p, dwell, timing.tau_max)
    p_watch = poisoning_flip_prob(budget.gamma_p, tau) * 2.0
    p_her = herald_probability(L_km, channel)

    # Setting-independent correlator factors multiply the readout/braid sum.
    common = (
        (1.0 - 2.0 * p_bar)
        * (1.0 - budget.p_dep)
        * (1.0 - channel.false_herald_rate)
    )
    readout_braid_sum = chsh_anisotropic_lower_bound(
        budget.replace(delta_cal=0.0), schedule
    )
    s_analytic = readout_braid_sum * common
    v_key = (
        (1.0 - 2.0 * budget.p_r) ** 2
        * (1.0 - budget.p_b) ** schedule.m_key
        * common
    )
    return OperatingPoint(
        tier=tier_name,
        L_km=L_km,
        tau_s=tau,
        p_bar_p=p_bar,
        p_watch=p_watch,
        p_herald=p_her,
        S_analytic=s_analytic,
        V_eff=s_analytic / TSIRELSON,
        Q=(1.0 - min(v_key, 1.0)) / 2.0,
    )


def _analytic_keylen(
    cfg: Config,
    point: OperatingPoint,
    *,
    n_valid: float | None = None,
    attempts: float | None = None,
) -> dict:
    """Key-length row from expected counts; exactly one of n_valid/attempts."""
    tier = cfg.tier(point.tier)
    eps = cfg.epsilons()
    gamma = cfg.get_float("protocol.gamma", 0.1)
    r0 = cfg.get_float("protocol.R0", 1e6)
    p_valid = point.p_herald * (1.0 - point.p_watch)

    if attempts is None:
        if n_valid is None:
            raise ValueError("need n_valid or attempts")
        m_valid = float(n_valid)
        attempts = m_valid / p_valid if p_valid > 0 else math.inf
    else:
        m_valid = attempts * p_valid

    m_test = gamma * m_valid
    n = int((1.0 - gamma) * m_valid)
    duration = attempts / r0 if math.isfinite(attempts) else math.inf

    if m_test < 1.0 or n < 1:
        return {
            "S_final": math.nan,
            "n": n,
            "ell": 0.0,
            "rate_per_round": 0.0,
            "rate_bps": 0.0,
            "abort": False,
        }

    mu = hoeffding_mu(int(m_test), eps.eps_PE)
    s_final = penalize_S(point.S_analytic, mu, 0.0, tier.budget.delta_cal)
    report = key_length(
        n,
        s_final,
        point.Q,
        cfg.f_EC,
        eps,
        cfg.v,
        cfg.C_EAT,
        attempts=int(attempts) if math.isfinite(attempts) else None,
        duration_s=duration if math.isfinite(duration) else None,
    )
    return {
        "S_final": s_final,
        "n": n,
        "ell": report.ell,
        "rate_per_round": report.rate_per_round,
        "rate_bps": report.rate_bps,
        "abort": False,
    }


def _simulate_keylen(cfg: Config, point: OperatingPoint, seed: int, attempts: int) -> dict:
    tier = cfg.tier(point.tier)
    protocol = cfg.protocol(seed).replace(block_size_N=attempts)
    tally = simulate_block(
        protocol, tier.budget, cfg.timing(point.L_km), cfg.schedule(), cfg.channel(tier)
    )
    tally = salvage(tally, 0.2).tally
    sigma = math.nan
    if not tally.is_empty:
        try:
            sigma = estimate_chsh(tally).sigma_S
        except InsufficientStatistics:
            pass
    report = postprocess_tally(
        tally,
        protocol,
        tier.budget,
        cfg.epsilons(),
        cfg.penalty(tier),
        f_EC=cfg.f_EC,
        v=cfg.v,
        C_EAT=cfg.C_EAT,
    )
    return {
        "S_final": report.S_final,
        "S_hat": report.S_hat,
        "sigma_S": sigma,
        "n": report.n,
        "ell": report.ell,
        "rate_per_round": report.rate_per_round,
        "rate_bps": report.rate_bps,
        "abort": report.abort,
    }


def _tier_list(spec: SweepSpec) -> tuple[str, ...]:
    if spec.tier is None:
        return TIER_NAMES
    if spec.tier not in TIER_NAMES:
        raise ValueError(f"unknown tier {spec.tier!r}")
    return (spec.tier,)


def blocksize_grid(cfg: Config) -> tuple[int, ...]:
    lo = cfg.get_float("sweep.blocksize.n_min", 1e3)
    hi = cfg.get_float("sweep.blocksize.n_max", 1e8)
    per_decade = cfg.get_int("sweep.blocksize.points_per_decade", 6)
    if lo <= 0 or hi <= lo:
        raise ValueError("blocksize grid needs positive endpoints with n_max > n_min")
    n_steps = int(round((math.log10(hi) - math.log10(lo)) * per_decade))
    exps = [math.log10(lo) + i / per_decade for i in range(n_steps + 1)]
    values = sorted({int(round(10.0**e)) for e in exps})
    return tuple(values)


def sweep_blocksize(cfg: Config, spec: SweepSpec) -> list[dict]:
    """Secret key yield vs accumulated block length N (valid rounds)."""
    l_km = spec.L_km if spec.L_km is not None else cfg.get_float("sweep.blocksize.L_km", 10.0)
    rows = []
    for tier_name in _tier_list(spec):
        point = operating_point(cfg, tier_name, l_km)
        for n_valid in blocksize_grid(cfg):
            if spec.mode == "simulate":
                p_valid = point.p_herald * (1.0 - point.p_watch)
                attempts = int(round(n_valid / p_valid))
                data = _simulate_keylen(cfg, point, spec.seed, attempts)
            else:
                data = _analytic_keylen(cfg, point, n_valid=n_valid)
            rows.append(
                {
                    "tier": tier_name,
                    "N": n_valid,
                    "L_km": l_km,
                    "mode": spec.mode,
                    **data,
                }
            )
    return rows


def distance_grid(cfg: Config) -> tuple[float, ...]:
    l_max = cfg.get_float("sweep.distance.L_max_km", 200.0)
    step = cfg.get_float("sweep.distance.step_km", 2.0)
    if step <= 0 or l_max < 0:
        raise ValueError("distance grid needs step > 0 and L_max >= 0")
    count = int(round(l_max / step))
    return tuple(i * step for i in range(count + 1))


def sweep_distance(cfg: Config, spec: SweepSpec) -> list[dict]:
    """Secret key rate vs fiber distance, with the hard-cutoff behaviour."""
    attempts = cfg.get_float("sweep.distance.attempts", 1e10)
    rows = []
    for tier_name in _tier_list(spec):
        for l_km in distance_grid(cfg):
            point = operating_point(cfg, tier_name, l_km)
            if spec.mode == "simulate":
                data = _simulate_keylen(cfg, point, spec.seed, int(attempts))
            else:
                data = _analytic_keylen(cfg, point, attempts=attempts)
            rows.append(
                {
                    "tier": tier_name,
                    "L_km": l_km,
                    "tau_s": point.tau_s,
                    "V_eff": point.V_eff,
                    "S_analytic": point.S_analytic,
                    "Q": point.Q,
                    "mode": spec.mode,
                    **data,
                }
            )
    return rows


def landscape_grids(cfg: Config) -> tuple[np.ndarray, np.ndarray]:
    n = cfg.get_int("sweep.landscape.grid", 40)
    pr = np.logspace(
        math.log10(cfg.get_float("sweep.landscape.p_r_min", 1e-4)),
        math.log10(cfg.get_float("sweep.landscape.p_r_max", 3e-2)),
        n,
    )
    gp = np.logspace(
        math.log10(cfg.get_float("sweep.landscape.gamma_p_min", 1e-3)),
        math.log10(cfg.get_float("sweep.landscape.gamma_p_max", 10.0)),
        n,
    )
    return pr, gp


def sweep_landscape(cfg: Config, spec: SweepSpec) -> list[dict]:
    """Isotropic-regime S over a (p_r, gamma_p) log grid at fixed distance."""
    tier_name = spec.tier or "target"
    tier = cfg.tier(tier_name)
    l_km = spec.L_km if spec.L_km is not None else cfg.get_float("sweep.landscape.L_km", 50.0)
    timing = cfg.timing(l_km)
    dwell = timing.dwell_distribution()
    k_bar = cfg.schedule().k_bar
    pr_grid, gp_grid = landscape_grids(cfg)
    rows = []
    for p_r in pr_grid:
        for gamma_p in gp_grid:
            budget = tier.budget.replace(p_r=float(p_r), gamma_p=float(gamma_p))
            p_bar = mean_poisoning_prob(budget.gamma_p, dwell, timing.tau_max)
            vis = visibility_isotropic(budget, k_bar, p_bar)
            rows.append(
                {
                    "p_r": float(p_r),
                    "gamma_p": float(gamma_p),
                    "L_km": l_km,
                    "V_eff": vis.value,
                    "S": TSIRELSON * vis.value,
                    "mode": "analytic",
                }
            )
    return rows


def sweep_multiplex(cfg: Config, spec: SweepSpec) -> list[dict]:
    """Linear rate scaling over parallel chains sharing one optical link."""
    l_km = spec.L_km if spec.L_km is not None else cfg.get_float("sweep.multiplex.L_km", 50.0)
    attempts = cfg.get_float("sweep.multiplex.attempts", 1e10)
    ks = tuple(int(k) for k in cfg.get_floats("sweep.multiplex.k", (1.0, 4.0, 16.0)))
    rows = []
    for tier_name in _tier_list(spec):
        point = operating_point(cfg, tier_name, l_km)
        base = _analytic_keylen(cfg, point, attempts=attempts)
        for k in ks:
            rows.append(
                {
                    "tier": tier_name,
                    "k": k,
                    "L_km": l_km,
                    "rate_bps": k * base["rate_bps"],
                    "mode": "analytic",
                }
            )
    return rows


def run_sweep(cfg: Config, spec: SweepSpec) -> list[dict]:
    fn = {
        "blocksize": sweep_blocksize,
        "distance": sweep_distance,
        "landscape": sweep_landscape,
        "multiplex": sweep_multiplex,
    }[spec.kind]
    return fn(cfg, spec)


# --------------------------------------------------------------------------
# Distance cutoffs
# --------------------------------------------------------------------------


def _bisect_crossing(f, lo: float, hi: float, iters: int = 80) -> float:
    """Smallest L with f(L) < 2, given f(lo) >= 2 > f(hi)."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) >= 2.0:
            lo = mid
        else:
            hi = mid
    return hi


def operational_cutoff_km(
    cfg: Config, tier_name: str, attempts: float | None = None, l_cap_km: float = 1e7
) -> float | None:
    """Distance where the penalized S_final crosses the classical bound.

    Uses the preset block budget; statistics thin out with herald decay, so
    the crossing combines poisoning and the finite-size deviation. Returns
    None if no crossing is found below l_cap_km.
    """
    if attempts is None:
        attempts = cfg.get_float("sweep.distance.attempts", 1e10)

    def s_final(l_km: float) -> float:
        point = operating_point(cfg, tier_name, l_km)
        row = _analytic_keylen(cfg, point, attempts=attempts)
        s = row["S_final"]
        return -math.inf if math.isnan(s) else s

    if s_final(0.0) < 2.0:
        return 0.0
    hi = 1.0
    while s_final(hi) >= 2.0:
        hi *= 2.0
        if hi > l_cap_km:
            return None
    return _bisect_crossing(s_final, hi / 2.0, hi)


def poisoning_cutoff_km(
    cfg: Config, tier_name: str, l_cap_km: float = 1e12
) -> float | None:
    """Distance where the analytic S itself (no statistics) crosses 2.

    This is the poisoning-induced visibility collapse: with gamma_p = 0 the
    visibility is flat in L and there is no crossing (returns None).
    """

    def s_pois(l_km: float) -> float:
        point = operating_point(cfg, tier_name, l_km)
        return point.S_analytic - 4.0 * cfg.tier(tier_name).budget.delta_cal

    if s_pois(0.0) < 2.0:
        return 0.0
    if cfg.tier(tier_name).budget.gamma_p == 0.0:
        return None
    hi = 1.0
    while s_pois(hi) >= 2.0:
        hi *= 2.0
        if hi > l_cap_km:
            return None
    return _bisect_crossing(s_pois, hi / 2.0, hi)


# --------------------------------------------------------------------------
# CSV / manifest output
# --------------------------------------------------------------------------


def format_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(rows: list[dict], kind: str, path: str | Path) -> None:
    """Write rows in deterministic grid order with the documented header."""
    columns = CSV_COLUMNS[kind]
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_value(row[c]) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n")


def write_manifest(
    out_path: str | Path,
    cfg: Config,
    *,
    kind: str,
    mode: str,
    seed: int,
    tier: str | None,
    n_rows: int,
    command: list[str],
) -> Path:
    manifest = {
        "tool": "diqkd",
        "version": __version__,
        "kind": kind,
        "mode": mode,
        "seed": seed,
        "tier": tier,
        "config_path": cfg.path,
        "config_sha256": cfg.sha256,
        "rows": n_rows,
        "output": Path(out_path).name,
        "command": command,
    }
    manifest_path = Path(str(out_path) + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path
