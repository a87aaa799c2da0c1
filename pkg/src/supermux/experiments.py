"""Experiment orchestration: drop sweeps, CDFs, mode fractions, slope tables.

Each experiment iterates user drops at several user counts, runs the
requested allocation schemes with the sum-rate weight (mu equal to the
number of users, unless overridden), and aggregates per-drop sum rates,
per-user spectral efficiencies, and per-subchannel mode counts into fixed
CSV schemas plus a JSON manifest.  Reruns with the same config and seed
reproduce the CSVs byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import allocator as al
from .channel import ChannelStats, MimoShape, build_channel_stats
from .oracle import dof_slope
from .rates import RateEstimator, with_lookup_table
from .surrogate import fit_alpha
from .sysim import NetworkScenario, drop_to_channel_stats, generate_drop

SCHEMES = ("alg1", "alg2", "uo", "mo", "om")


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep settings for the drop-based experiments."""

    scenario: NetworkScenario = NetworkScenario()
    user_counts: tuple = (20,)
    schemes: tuple = ("alg1", "uo", "mo", "om")
    n_drops: int = 200
    mu_policy: object = "sum-rate"     # mu = K, or a fixed float
    shapes: tuple = (MimoShape(8, 4),)
    seed: int = 0
    p_t: float = 1.0
    om_split: float = 0.5
    table_samples: int = 100_000
    table_x_max: float = 1e8
    alpha_samples: int = 100_000
    out_dir: str = "out"
    opts: al.AllocatorOptions = al.DEFAULT_OPTIONS

    def __post_init__(self):
        if self.n_drops < 1:
            raise ValueError("n_drops must be >= 1")
        if not self.schemes:
            raise ValueError("schemes must be nonempty")
        unknown = set(self.schemes) - set(SCHEMES)
        if unknown:
            raise ValueError(f"unknown schemes: {sorted(unknown)}")

    def mu_for(self, k_users: int) -> float:
        if self.mu_policy == "sum-rate":
            return float(k_users)
        return float(self.mu_policy)


@dataclass
class ExperimentResult:
    """Aggregated samples keyed by (scheme, k_users, 'n_t x n_r')."""

    sum_rates: dict = field(default_factory=dict)
    user_se: dict = field(default_factory=dict)
    mode_counts: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)


def run_scheme(name: str, stats: ChannelStats, mu_total: float, p_t: float,
               alpha: float, est: RateEstimator,
               opts: al.AllocatorOptions = al.DEFAULT_OPTIONS, om_split: float = 0.5):
    """Dispatch one allocation scheme by name."""
    if name == "alg1":
        return al.algorithm1(stats, mu_total, p_t, alpha, est, opts)
    if name == "alg2":
        return al.algorithm2(stats, mu_total, p_t, alpha, est, opts)
    if name == "uo":
        return al.baseline_unicast_only(stats, p_t, alpha, est, opts)
    if name == "mo":
        return al.baseline_multicast_only(stats, mu_total, p_t, alpha, est, opts)
    if name == "om":
        return al.baseline_orthogonal(stats, mu_total, p_t, alpha, om_split, est, opts)
    raise ValueError(f"unknown scheme {name!r}")


def cdf_stats(samples, p: float = 5.0):
    """Empirical CDF and an order-statistic percentile.

    Returns ``(xs, F(xs), percentile)`` where the percentile interpolates
    between order statistics; at least 20 samples are required for the
    percentile to be meaningful.
    """
    samples = np.sort(np.asarray(samples, dtype=float))
    if samples.size < 20:
        raise ValueError("need at least 20 samples for a percentile estimate")
    cdf = np.arange(1, samples.size + 1) / samples.size
    pct = float(np.percentile(samples, p, method="weibull"))
    return samples, cdf, pct


def mode_fractions(allocations) -> dict:
    """Fraction of (drop, subchannel) pairs in each transmission mode."""
    counts = {al.MODE_OFF: 0, al.MODE_UNICAST: 0, al.MODE_MULTICAST: 0,
              al.MODE_SUPERPOSITION: 0}
    total = 0
    for alloc in allocations:
        for mode in alloc.mode:
            counts[mode] += 1
            total += 1
    if total == 0:
        raise ValueError("no allocations given")
    return {mode: c / total for mode, c in counts.items()}


def _shape_tag(shape: MimoShape) -> str:
    return f"{shape.n_t}x{shape.n_r}"


def _config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(asdict(config), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_experiment(config: ExperimentConfig, write_files: bool = True) -> ExperimentResult:
    """Run the drop sweep and (optionally) write the CSV/JSON outputs.

    Per-drop channel statistics are keyed by (seed, drop index), so drops
    are independent of iteration order.  Solver failures skip the drop for
    the failing scheme and are counted in the manifest.
    """
    t_start = time.time()
    result = ExperimentResult()
    skips = {}

    for shape in config.shapes:
        tag = _shape_tag(shape)
        est = with_lookup_table(shape, n_samples=config.table_samples,
                                seed=config.seed, x_max=config.table_x_max)
        alpha, _ = fit_alpha(shape, RateEstimator(
            shape=shape, n_samples=config.alpha_samples, seed=config.seed))

        for k_users in config.user_counts:
            mu = config.mu_for(k_users)
            per_scheme_rates = {s: [] for s in config.schemes}
            per_scheme_se = {s: [] for s in config.schemes}
            alg1_allocs = []
            for d in range(config.n_drops):
                drop = generate_drop(config.scenario, k_users, config.seed, drop_index=d)
                stats = drop_to_channel_stats(drop, config.scenario)
                for scheme in config.schemes:
                    try:
                        alloc, rates = run_scheme(scheme, stats, mu, config.p_t,
                                                  alpha, est, config.opts,
                                                  config.om_split)
                    except (al.ConvergenceError, RuntimeError) as exc:
                        skips.setdefault(f"{scheme}/K={k_users}/{tag}", []).append(
                            f"drop {d}: {exc}")
                        continue
                    per_scheme_rates[scheme].append(rates.sum_rate)
                    per_scheme_se[scheme].extend((rates.r0 + rates.r_k).tolist())
                    if scheme == "alg1":
                        alg1_allocs.append(alloc)
            for scheme in config.schemes:
                result.sum_rates[(scheme, k_users, tag)] = np.array(
                    per_scheme_rates[scheme])
                result.user_se[(scheme, k_users, tag)] = np.array(per_scheme_se[scheme])
            if alg1_allocs:
                result.mode_counts[(k_users, tag)] = mode_fractions(alg1_allocs)

    result.manifest = {
        "config_hash": _config_hash(config),
        "seed": config.seed,
        "runtime_s": time.time() - t_start,
        "skipped": {k: len(v) for k, v in skips.items()},
        "skip_detail": skips,
    }
    if write_files:
        write_experiment_files(config, result)
    return result


def write_experiment_files(config: ExperimentConfig, result: ExperimentResult) -> None:
    """Emit cdf.csv / percentile.csv / modes.csv / manifest.json per shape."""
    for shape in config.shapes:
        tag = _shape_tag(shape)
        base = Path(config.out_dir) / tag
        base.mkdir(parents=True, exist_ok=True)

        lines = ["scheme,k_users,sum_rate_bps_hz"]
        for (scheme, k, t), samples in sorted(result.sum_rates.items()):
            if t != tag:
                continue
            for v in samples:
                lines.append(f"{scheme},{k},{float(v)!r}")
        (base / "cdf.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

        lines = ["scheme,k_users,p5_se"]
        for (scheme, k, t), samples in sorted(result.user_se.items()):
            if t != tag or samples.size < 20:
                continue
            _, _, p5 = cdf_stats(samples)
            lines.append(f"{scheme},{k},{float(p5)!r}")
        (base / "percentile.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

        lines = ["k_users,mode,fraction"]
        for (k, t), fracs in sorted(result.mode_counts.items()):
            if t != tag:
                continue
            for mode in (al.MODE_UNICAST, al.MODE_MULTICAST,
                         al.MODE_SUPERPOSITION, al.MODE_OFF):
                lines.append(f"{k},{mode},{float(fracs[mode])!r}")
        (base / "modes.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

        with open(base / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(result.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# degrees-of-freedom sweeps

@dataclass(frozen=True)
class DofConfig:
    """High-SNR slope sweep settings (synthetic channel statistics)."""

    schemes: tuple = ("mo", "uo", "mixed")
    shapes: tuple = (MimoShape(2, 2),)
    n_users: int = 3
    n_subchannels: int = 2
    p_grid_db: tuple = tuple(float(v) for v in range(30, 61, 5))
    seed: int = 0
    mu_policy: object = "sum-rate"
    snr_spread_db: float = 6.0
    mixed_m_prime: int = 1
    mixed_fraction: float = 0.5
    om_split: float = 0.5
    table_samples: int = 100_000
    out_dir: str = "out"

    def mu(self) -> float:
        if self.mu_policy == "sum-rate":
            return float(self.n_users)
        return float(self.mu_policy)


def dof_stats(config: DofConfig) -> ChannelStats:
    """Seeded random per-user SNRs, flat across subchannels."""
    rng = np.random.Generator(np.random.Philox(
        key=np.array([config.seed, 0xD0F], dtype=np.uint64)))
    snr_db = rng.uniform(0.0, config.snr_spread_db, size=config.n_users)
    snr = 10.0 ** (snr_db / 10.0)
    M = config.n_subchannels
    return build_channel_stats(np.tile(snr, (M, 1)) * M, np.full(M, 1.0 / M))


def dof_experiment(config: DofConfig, write_files: bool = True) -> list:
    """Fit the sum-rate slope for each (scheme, shape); emits dof.csv."""
    stats = dof_stats(config)
    p_max = 10.0 ** (max(config.p_grid_db) / 10.0)
    x_max = float(np.max(stats.snr)) * p_max * 10.0
    rows = []
    for shape in config.shapes:
        est = with_lookup_table(shape, n_samples=config.table_samples,
                                seed=config.seed, x_max=x_max, n_points=384)
        alpha, _ = fit_alpha(shape, RateEstimator(
            shape=shape, n_samples=config.table_samples, seed=config.seed))
        for scheme in config.schemes:
            slope = dof_slope(scheme, stats, config.p_grid_db, config.mu(), est,
                              alpha=alpha, mixed_m_prime=config.mixed_m_prime,
                              mixed_fraction=config.mixed_fraction,
                              om_split=config.om_split)
            rows.append((scheme, _shape_tag(shape), slope))
    if write_files:
        base = Path(config.out_dir)
        base.mkdir(parents=True, exist_ok=True)
        lines = ["scheme,shape,slope"]
        for scheme, tag, slope in rows:
            lines.append(f"{scheme},{tag},{float(slope)!r}")
        (base / "dof.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows


def load_experiment_config(path) -> ExperimentConfig:
    """Read an experiment config from JSON; 'scenario' may be inline or a path."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    scenario = raw.pop("scenario", None)
    if isinstance(scenario, str):
        from .sysim import load_scenario
        scenario = load_scenario(scenario)
    elif isinstance(scenario, dict):
        scenario = NetworkScenario(**scenario)
    else:
        scenario = NetworkScenario()
    shapes = tuple(MimoShape(*s) for s in raw.pop("shapes", [(8, 4)]))
    for key in ("user_counts", "schemes"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return ExperimentConfig(scenario=scenario, shapes=shapes, **raw)
