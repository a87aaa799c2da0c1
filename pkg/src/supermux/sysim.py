"""Rural-macro system-level scenario generator.

Builds the hexagonal 19-site / 3-sector layout, applies the rural-macro
pathloss and sector antenna pattern with correlated log-normal shadowing,
drops users uniformly over the measured sector's area, attaches each user
to the sector with the strongest wideband SINR, and converts the surviving
users' wideband SNRs into per-subchannel channel statistics.

Angle convention: azimuths are degrees counterclockwise from east; sector
boresights are {90, 210, 330}, so sector 0 of the central site faces north
and is the measured sector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .channel import ChannelStats, build_channel_stats

SPEED_OF_LIGHT = 299_792_458.0

BORESIGHTS_DEG = (90.0, 210.0, 330.0)


@dataclass(frozen=True)
class PatternParams:
    """Sector antenna pattern constants (3-sector macro defaults)."""

    phi_3db: float = 65.0
    theta_3db: float = 65.0
    a_max_db: float = 30.0
    sla_v_db: float = 30.0
    max_gain_dbi: float = 8.0
    downtilt_deg: float = 0.0


@dataclass(frozen=True)
class NetworkScenario:
    """Deployment and link-budget parameters (defaults: 700 MHz rural macro)."""

    carrier_freq_hz: float = 700e6
    bandwidth_hz: float = 10e6
    isd_m: float = 1732.0
    n_sites: int = 19
    sectors_per_site: int = 3
    tx_power_dbm: float = 46.0
    bs_height_m: float = 35.0
    ue_height_m: float = 1.5
    bs_gain_dbi: float = 8.0
    ue_gain_dbi: float = 0.0
    ue_noise_figure_db: float = 7.0
    shadow_sigma_db: float = 7.0
    shadow_corr_dist_m: float = 120.0
    indoor_fraction: float = 0.5
    n_subchannels: int = 10
    # propagation-model constants
    avg_building_height_m: float = 5.0
    street_width_m: float = 20.0
    min_bs_ue_dist_m: float = 35.0
    indoor_loss_db: float = 10.0
    car_loss_db: float = 9.0

    def __post_init__(self):
        numeric = [self.carrier_freq_hz, self.bandwidth_hz, self.isd_m, self.n_sites,
                   self.sectors_per_site, self.bs_height_m, self.ue_height_m,
                   self.ue_noise_figure_db, self.shadow_sigma_db,
                   self.shadow_corr_dist_m, self.n_subchannels]
        if any(v <= 0 for v in numeric):
            raise ValueError("scenario parameters must be positive")
        if not 0.0 <= self.indoor_fraction <= 1.0:
            raise ValueError("indoor_fraction must lie in [0, 1]")

    @property
    def noise_floor_dbm(self) -> float:
        return -174.0 + 10.0 * np.log10(self.bandwidth_hz) + self.ue_noise_figure_db

    @property
    def cell_radius_m(self) -> float:
        """Center-to-vertex radius of the hexagonal cell."""
        return self.isd_m / np.sqrt(3.0)


def save_scenario(scenario: NetworkScenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> NetworkScenario:
    with open(path, "r", encoding="utf-8") as fh:
        return NetworkScenario(**json.load(fh))


@dataclass(frozen=True)
class SiteLayout:
    positions: np.ndarray           # (n_sites, 2) meters
    boresights_deg: tuple = BORESIGHTS_DEG

    @property
    def n_sectors(self) -> int:
        return self.positions.shape[0] * len(self.boresights_deg)


def layout_sites(scenario: NetworkScenario) -> SiteLayout:
    """Hex-grid site centers: central site plus two full rings at ISD spacing."""
    a = np.array([1.0, 0.0])
    b = np.array([0.5, np.sqrt(3.0) / 2.0])
    coords = [(0, 0)]
    ring1 = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]
    ring2 = [(2, 0), (1, 1), (0, 2), (-1, 2), (-2, 2), (-2, 1),
             (-2, 0), (-1, -1), (0, -2), (1, -2), (2, -2), (2, -1)]
    coords += ring1 + ring2
    pos = np.array([i * a + j * b for i, j in coords]) * scenario.isd_m
    if len(pos) != scenario.n_sites:
        raise ValueError(f"layout supports 19 sites, scenario asks for {scenario.n_sites}")
    pos.setflags(write=False)
    return SiteLayout(positions=pos)


def sector_gain(angle_off_boresight_h, angle_v, params: PatternParams = PatternParams()):
    """Directional sector gain in dBi for given horizontal/vertical offsets.

    Parabolic-in-dB pattern in both planes, each floored at its side-lobe
    level, combined and clipped at the overall front-to-back limit.
    """
    phi = np.asarray(angle_off_boresight_h, dtype=float)
    theta = np.asarray(angle_v, dtype=float) - params.downtilt_deg
    a_h = -np.minimum(12.0 * (phi / params.phi_3db) ** 2, params.a_max_db)
    a_v = -np.minimum(12.0 * (theta / params.theta_3db) ** 2, params.sla_v_db)
    a = -np.minimum(-(a_h + a_v), params.a_max_db)
    out = params.max_gain_dbi + a
    return out if out.ndim else float(out)


def _pathloss_los(d_2d, d_3d, scenario: NetworkScenario):
    fc_ghz = scenario.carrier_freq_hz / 1e9
    h = scenario.avg_building_height_m
    d_bp = (2.0 * np.pi * scenario.bs_height_m * scenario.ue_height_m
            * scenario.carrier_freq_hz / SPEED_OF_LIGHT)

    def pl1(d):
        return (20.0 * np.log10(40.0 * np.pi * d * fc_ghz / 3.0)
                + min(0.03 * h ** 1.72, 10.0) * np.log10(d)
                - min(0.044 * h ** 1.72, 14.77)
                + 0.002 * np.log10(h) * d)

    return np.where(d_2d <= d_bp, pl1(d_3d), pl1(d_bp) + 40.0 * np.log10(d_3d / d_bp))


def _pathloss_nlos(d_3d, scenario: NetworkScenario):
    fc_ghz = scenario.carrier_freq_hz / 1e9
    h = scenario.avg_building_height_m
    h_bs = scenario.bs_height_m
    h_ut = scenario.ue_height_m
    w = scenario.street_width_m
    return (161.04 - 7.1 * np.log10(w) + 7.5 * np.log10(h)
            - (24.37 - 3.7 * (h / h_bs) ** 2) * np.log10(h_bs)
            + (43.42 - 3.1 * np.log10(h_bs)) * (np.log10(d_3d) - 3.0)
            + 20.0 * np.log10(fc_ghz)
            - (3.2 * np.log10(11.75 * h_ut) ** 2 - 4.97))


def pathloss_rma(d_2d, scenario: NetworkScenario, los) -> float:
    """Rural-macro pathloss in dB; NLOS takes the max of the two branches."""
    d_2d = np.asarray(d_2d, dtype=float)
    if np.any(d_2d < 10.0) or np.any(d_2d > 10_000.0):
        raise ValueError("2-D distance outside the 10 m .. 10 km validity range")
    d_3d = np.sqrt(d_2d ** 2 + (scenario.bs_height_m - scenario.ue_height_m) ** 2)
    pl_los = _pathloss_los(d_2d, d_3d, scenario)
    los = np.asarray(los, dtype=bool)
    if np.all(los):
        out = pl_los
    else:
        if np.any(d_2d[~los] > 5_000.0):
            raise ValueError("NLOS branch valid only up to 5 km")
        out = np.where(los, pl_los, np.maximum(pl_los, _pathloss_nlos(d_3d, scenario)))
    return out if out.ndim else float(out)


def los_probability(d_2d, scenario: NetworkScenario):
    """Line-of-sight probability for the rural-macro deployment."""
    d_2d = np.asarray(d_2d, dtype=float)
    out = np.where(d_2d <= 10.0, 1.0, np.exp(-(d_2d - 10.0) / 1000.0))
    return out if out.ndim else float(out)


def shadowing_field(positions, sigma_db: float = 7.0, d_corr: float = 120.0,
                    seed: int = 0, n_fields: int = 1) -> np.ndarray:
    """Correlated log-normal shadowing draws, one independent field per site.

    Covariance between two user positions is sigma^2 exp(-d / d_corr);
    sampled through a Cholesky factor with a tiny diagonal regularizer.
    Returns shape (n_fields, n_users) in dB.
    """
    positions = np.asarray(positions, dtype=float)
    if not np.all(np.isfinite(positions)):
        raise ValueError("positions must be finite")
    n = positions.shape[0]
    d = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
    cov = sigma_db ** 2 * np.exp(-d / d_corr)
    cov[np.diag_indices(n)] += 1e-9 * sigma_db ** 2
    chol = np.linalg.cholesky(cov)
    out = np.empty((n_fields, n))
    for f in range(n_fields):
        rng = np.random.Generator(np.random.Philox(
            key=np.array([seed, 0x5AD0_0000 | f], dtype=np.uint64)))
        out[f] = chol @ rng.standard_normal(n)
    return out


@dataclass(frozen=True)
class Drop:
    """Users kept for one drop: all attached to the measured sector."""

    user_positions: np.ndarray      # (K, 2) meters
    serving_sector: np.ndarray      # (K,) flat sector ids
    snr_h: np.ndarray               # (K,) linear wideband SNR
    indoor: np.ndarray              # (K,) bool; False means in-car
    seed: int
    drop_index: int = 0


def _drop_rng(seed: int, drop_index: int, purpose: int) -> np.random.Generator:
    key = np.array([seed, (drop_index << 20) | purpose], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _in_hexagon(points: np.ndarray, apothem: float) -> np.ndarray:
    """Membership in the hexagonal cell whose flat sides face the neighbors."""
    axes = np.array([[np.cos(a), np.sin(a)] for a in np.radians([0.0, 60.0, 120.0])])
    proj = np.abs(points @ axes.T)
    return np.all(proj <= apothem, axis=1)


def sample_sector_positions(n: int, scenario: NetworkScenario,
                            rng: np.random.Generator) -> np.ndarray:
    """Uniform positions in the measured (north) sector of the central cell."""
    apothem = scenario.isd_m / 2.0
    radius = scenario.cell_radius_m
    out = np.empty((0, 2))
    while out.shape[0] < n:
        cand = rng.uniform(-radius, radius, size=(4 * n + 16, 2))
        az = np.degrees(np.arctan2(cand[:, 1], cand[:, 0])) % 360.0
        dist = np.linalg.norm(cand, axis=1)
        keep = (_in_hexagon(cand, apothem)
                & (az >= 30.0) & (az < 150.0)
                & (dist >= scenario.min_bs_ue_dist_m))
        out = np.vstack([out, cand[keep]])
    return out[:n]


def attach_and_link_budget(positions, indoor, shadow_db, los, scenario: NetworkScenario,
                           layout: SiteLayout):
    """Received powers, strongest-SINR attachment, and noise-referenced SNRs.

    Parameters
    ----------
    positions : ndarray (n, 2)
    indoor : bool ndarray (n,); False means in-car penetration loss
    shadow_db : ndarray (n_sites, n), per-site correlated shadowing
    los : bool ndarray (n_sites, n)
    scenario, layout

    Returns
    -------
    serving : int ndarray (n,), flat sector ids (site * 3 + sector)
    snr_db : ndarray (n,), wideband SNR toward the serving sector
    sinr_db : ndarray (n,), attachment metric at the serving sector
    """
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    n_sites = layout.positions.shape[0]
    pattern = PatternParams(max_gain_dbi=scenario.bs_gain_dbi)
    pen = np.where(np.asarray(indoor, dtype=bool),
                   scenario.indoor_loss_db, scenario.car_loss_db)

    rx_dbm = np.empty((n, n_sites, len(layout.boresights_deg)))
    for s in range(n_sites):
        delta = positions - layout.positions[s]
        d2d = np.maximum(np.linalg.norm(delta, axis=1), scenario.min_bs_ue_dist_m)
        pl = pathloss_rma(d2d, scenario, los[s])
        depression = np.degrees(np.arctan2(
            scenario.bs_height_m - scenario.ue_height_m, d2d))
        az = np.degrees(np.arctan2(delta[:, 1], delta[:, 0]))
        for c, bore in enumerate(layout.boresights_deg):
            off = (az - bore + 180.0) % 360.0 - 180.0
            gain = sector_gain(off, depression, pattern)
            rx_dbm[:, s, c] = (scenario.tx_power_dbm + gain + scenario.ue_gain_dbi
                               - pl - shadow_db[s] - pen)

    rx_flat = rx_dbm.reshape(n, -1)
    rx_mw = 10.0 ** (rx_flat / 10.0)
    noise_mw = 10.0 ** (scenario.noise_floor_dbm / 10.0)
    total = rx_mw.sum(axis=1, keepdims=True)
    sinr = rx_mw / (total - rx_mw + noise_mw)
    serving = np.argmax(sinr, axis=1)  # argmax takes the lowest index on ties
    rows = np.arange(n)
    snr_db = rx_flat[rows, serving] - scenario.noise_floor_dbm
    sinr_db = 10.0 * np.log10(sinr[rows, serving])
    return serving, snr_db, sinr_db


MEASURED_SECTOR = 0  # central site, north-facing


def generate_drop(scenario: NetworkScenario, n_users: int, seed: int,
                  drop_index: int = 0, max_rounds: int = 200) -> Drop:
    """Draw users in the measured sector until ``n_users`` attach to it.

    Candidates are sampled uniformly over the sector area; those whose
    strongest-SINR sector is not the measured one are rejected and redrawn,
    so the kept ensemble is uniform conditioned on attachment.
    """
    layout = layout_sites(scenario)
    kept_pos, kept_snr, kept_indoor = [], [], []
    n_kept = 0
    for rnd in range(max_rounds):
        batch = max(2 * (n_users - n_kept) + 8, 16)
        rng_pos = _drop_rng(seed, drop_index, 0x10 | (rnd << 8))
        pos = sample_sector_positions(batch, scenario, rng_pos)
        rng_ind = _drop_rng(seed, drop_index, 0x11 | (rnd << 8))
        indoor = rng_ind.uniform(size=batch) < scenario.indoor_fraction
        rng_los = _drop_rng(seed, drop_index, 0x12 | (rnd << 8))
        d2d_all = np.linalg.norm(pos[None, :, :] - layout.positions[:, None, :], axis=-1)
        d2d_all = np.maximum(d2d_all, scenario.min_bs_ue_dist_m)
        los = rng_los.uniform(size=d2d_all.shape) < los_probability(d2d_all, scenario)
        shadow = shadowing_field(pos, scenario.shadow_sigma_db,
                                 scenario.shadow_corr_dist_m,
                                 seed=seed ^ (drop_index * 0x9E37 + rnd),
                                 n_fields=layout.positions.shape[0])
        serving, snr_db, _ = attach_and_link_budget(pos, indoor, shadow, los,
                                                    scenario, layout)
        hit = serving == MEASURED_SECTOR
        kept_pos.append(pos[hit])
        kept_snr.append(snr_db[hit])
        kept_indoor.append(indoor[hit])
        n_kept += int(hit.sum())
        if n_kept >= n_users:
            break
    else:
        raise RuntimeError(f"could not attach {n_users} users after {max_rounds} rounds")

    pos = np.vstack(kept_pos)[:n_users]
    snr_db = np.concatenate(kept_snr)[:n_users]
    indoor = np.concatenate(kept_indoor)[:n_users]
    return Drop(user_positions=pos,
                serving_sector=np.full(n_users, MEASURED_SECTOR),
                snr_h=10.0 ** (snr_db / 10.0),
                indoor=indoor, seed=seed, drop_index=drop_index)


def drop_to_channel_stats(drop: Drop, scenario: NetworkScenario,
                          n_users: int | None = None) -> ChannelStats:
    """Spread each user's wideband SNR over the subchannels.

    Frequency-flat statistics: every subchannel sees the same wideband SNR
    scaled by 1/eta_i, with eta_i = 1/M.
    """
    K = n_users if n_users is not None else drop.snr_h.shape[0]
    if K > drop.snr_h.shape[0]:
        raise ValueError("drop holds fewer users than requested")
    M = scenario.n_subchannels
    eta = np.full(M, 1.0 / M)
    snr = drop.snr_h[None, :K] / eta[:, None]
    return build_channel_stats(snr, eta)


def drop_to_csv(drop: Drop) -> str:
    lines = ["user_id,x_m,y_m,sector_id,snr_db"]
    snr_db = 10.0 * np.log10(drop.snr_h)
    for u in range(drop.user_positions.shape[0]):
        lines.append(f"{u},{float(drop.user_positions[u, 0])!r},"
                     f"{float(drop.user_positions[u, 1])!r},"
                     f"{int(drop.serving_sector[u])},{float(snr_db[u])!r}")
    return "\n".join(lines) + "\n"
