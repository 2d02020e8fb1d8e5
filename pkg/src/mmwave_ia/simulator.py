"""Monte Carlo simulation of initial access cycles and the data phase.

A realization drops a BS PPP and a user PPP on a square window, draws one
LOS/NLOS state per link and independent unit-mean exponential fading for each
phase, then plays cell search, random access and one data slot.  Only users in
the interior of the window are measured; every user takes part in contention
and every BS in interference.

Each realization owns a Philox stream keyed by ``(seed, bs draw, user draw)``,
so campaigns are reproducible and independent of the number of workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BlockageModel,
    ConfigError,
    Protocol,
    SystemConfig,
    sector_index,
    user_gains,
)

DESK_DRAWS = (10, 10)
WORKERS_ENV = "MMWIA_WORKERS"
DEFAULT_SINR_DB = (0.0, 10.0, 20.0)


@dataclass(frozen=True)
class SimulationConfig:
    area_km: float = 1.5
    n_bs_draws: int = 50
    n_user_draws: int = 50
    seed: int = 0
    interior_margin_km: float = 0.15
    desk_scale: bool = False
    workers: int | None = None
    sinr_thresholds_db: tuple = DEFAULT_SINR_DB

    def __post_init__(self):
        if not self.area_km > 0:
            raise ConfigError("area_km must be positive")
        if self.n_bs_draws < 1 or self.n_user_draws < 1:
            raise ConfigError("draw counts must be >= 1")
        if not 0 <= self.interior_margin_km < self.area_km / 2:
            raise ConfigError("interior_margin_km must be in [0, area_km/2)")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def draws(self) -> tuple[int, int]:
        if self.desk_scale:
            return min(DESK_DRAWS[0], self.n_bs_draws), min(DESK_DRAWS[1], self.n_user_draws)
        return self.n_bs_draws, self.n_user_draws

    @property
    def side_m(self) -> float:
        return self.area_km * 1e3

    @property
    def margin_m(self) -> float:
        return self.interior_margin_km * 1e3

    def resolved_workers(self) -> int:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        return max(1, self.workers or 1)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one labelled stream."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class NetworkRealization:
    bs: np.ndarray             # (B, 2) metres
    users: np.ndarray          # (U, 2) metres
    interior: np.ndarray       # (U,) measured users
    dist: np.ndarray           # (U, B)
    angle: np.ndarray          # (U, B) direction user -> BS
    los: np.ndarray            # (U, B) bool
    pl: np.ndarray             # (U, B) linear path loss
    fading: dict               # phase -> (U, B) unit-mean exponential
    preamble: np.ndarray       # (U,)
    sched_key: np.ndarray      # (U,) uniform keys for the random scheduler
    bs_interior: np.ndarray = field(default=None)

    @property
    def n_users(self):
        return self.users.shape[0]

    @property
    def n_bs(self):
        return self.bs.shape[0]


def sample_realization(cfg: SystemConfig, model: BlockageModel, sim: SimulationConfig,
                       stream_id: tuple[int, int]) -> NetworkRealization:
    i_bs, i_user = stream_id
    side = sim.side_m
    area = side * side
    rng_bs = stream(sim.seed, 0, i_bs)
    bs = rng_bs.uniform(0.0, side, size=(rng_bs.poisson(cfg.lambda_bs * area), 2))
    rng = stream(sim.seed, 1, i_bs, i_user)
    users = rng.uniform(0.0, side, size=(rng.poisson(cfg.lambda_u * area), 2))

    delta = bs[None, :, :] - users[:, None, :]
    dist = np.hypot(delta[..., 0], delta[..., 1])
    dist = np.maximum(dist, 1e-9)
    angle = np.arctan2(delta[..., 1], delta[..., 0])
    los = rng.random(dist.shape) < model.los_probability(dist)
    pl = cfg.beta * dist ** np.where(los, cfg.alpha_los, cfg.alpha_nlos)
    fading = {phase: rng.exponential(1.0, size=dist.shape) for phase in ("cs", "ra", "dl")}
    preamble = rng.integers(0, cfg.n_pa, size=users.shape[0])
    sched_key = rng.random(users.shape[0])
    m = sim.margin_m

    def inside(p):
        return np.all((p >= m) & (p <= side - m), axis=1) if p.size else np.zeros(0, bool)

    return NetworkRealization(bs=bs, users=users, interior=inside(users), dist=dist,
                              angle=angle, los=los, pl=pl, fading=fading,
                              preamble=preamble, sched_key=sched_key,
                              bs_interior=inside(bs))


# --------------------------------------------------------------------------
# phases
# --------------------------------------------------------------------------

@dataclass
class UserOutcome:
    """Per-user outcome arrays of one realization (index = user id)."""
    sector_detected: np.ndarray      # (U, K_cs)
    sector_min_pl: np.ndarray        # (U, K_cs), inf for empty sectors
    sector_sinr: np.ndarray          # (U, K_cs)
    cs_success: np.ndarray           # e_0
    serving: np.ndarray              # BS id, -1 without CS success
    z0: np.ndarray                   # serving path loss, inf without CS success
    ra_collision: np.ndarray = None
    ra_decode: np.ndarray = None
    ra_sinr: np.ndarray = None
    connected: np.ndarray = None     # e_0 * delta_0
    cell_load: np.ndarray = None     # connected users sharing the serving BS
    scheduled: np.ndarray = None
    dl_sinr: np.ndarray = None       # SINR if scheduled, nan when not connected


def run_cell_search(real: NetworkRealization, proto: Protocol, cfg: SystemConfig) -> UserOutcome:
    U, B = real.n_users, real.n_bs
    K = proto.k_cs
    g_cs, _ = user_gains(proto.n_cs, cfg)
    noise = cfg.noise / (cfg.p_bs * proto.m_cs * g_cs)
    det = np.zeros((U, K), bool)
    min_pl = np.full((U, K), np.inf)
    sinr = np.zeros((U, K))
    serving = np.full(U, -1)
    z0 = np.full(U, np.inf)
    if U and B:
        rows = np.arange(U)[:, None]
        # stable sort: equal path losses resolve to the lowest BS index
        order = np.argsort(real.pl, axis=1, kind="stable")
        sec = sector_index(real.angle[rows, order], K)
        key = (rows * K + sec).ravel()
        rx = real.fading["cs"] / real.pl
        total = np.bincount((rows * K + sector_index(real.angle, K)).ravel(),
                            rx.ravel(), minlength=U * K)
        first = np.full(U * K, U * B)
        np.minimum.at(first, key, np.arange(U * B))
        groups = np.nonzero(first < U * B)[0]
        u_of = groups // K
        b_of = order.ravel()[first[groups]]
        best_rx = rx[u_of, b_of]
        s = best_rx / (total[groups] - best_rx + noise)
        min_pl.ravel()[groups] = real.pl[u_of, b_of]
        sinr.ravel()[groups] = s
        det.ravel()[groups] = s >= cfg.gamma_cs
        best_bs = np.full(U * K, -1)
        best_bs[groups] = b_of
        best_bs = best_bs.reshape(U, K)
        masked = np.where(det, min_pl, np.inf)
        k_star = np.argmin(masked, axis=1)
        ok = det.any(axis=1)
        serving[ok] = best_bs[ok, k_star[ok]]
        z0[ok] = masked[ok, k_star[ok]]
    return UserOutcome(sector_detected=det, sector_min_pl=min_pl, sector_sinr=sinr,
                       cs_success=serving >= 0, serving=serving, z0=z0)


def run_random_access(real: NetworkRealization, out: UserOutcome, proto: Protocol,
                      cfg: SystemConfig) -> UserOutcome:
    U = real.n_users
    g_ra, g_side = user_gains(max(proto.n_cs, proto.n_ra), cfg)
    side_ratio = g_side / g_ra
    noise = cfg.noise / (cfg.p_user * proto.m_ra * g_ra)
    n_eff = max(proto.n_cs, proto.n_ra)
    collision = np.zeros(U, bool)
    decode = np.zeros(U, bool)
    ra_sinr = np.zeros(U)
    act = np.nonzero(out.cs_success)[0]
    if act.size:
        b0 = out.serving[act]
        # BS receive sector of each active user at its own tagged BS
        rx_sec = sector_index(real.angle[act, b0] + math.pi, proto.m_ra)
        pre = real.preamble[act]
        key = (b0 * cfg.n_pa + pre) * proto.m_ra + rx_sec
        _, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
        collision[act] = counts[inv] >= 2
        signal = real.fading["ra"][act, b0] / out.z0[act]
        interference = np.zeros(act.size)
        for p in np.unique(pre):
            grp = np.nonzero(pre == p)[0]
            if grp.size < 2:
                continue
            users_g, b_g = act[grp], b0[grp]
            # [v, u]: interferer v as heard by the tagged BS of u
            ang = real.angle[users_g[:, None], b_g[None, :]]
            same = sector_index(ang + math.pi, proto.m_ra) == rx_sec[grp][None, :]
            np.fill_diagonal(same, False)
            if not same.any():
                continue
            if n_eff == 1:
                cover = np.ones_like(same)
            else:
                toward = sector_index(ang, n_eff)
                if proto.n_ra == 1:
                    ref = sector_index(real.angle[users_g, b_g], n_eff)[:, None]
                else:
                    # users sweep in lockstep; the tagged BS hears u in the
                    # slot where u faces it
                    ref = sector_index(real.angle[users_g, b_g], n_eff)[None, :]
                cover = toward == ref
            ratio = np.where(cover, 1.0, side_ratio)
            power = ratio * real.fading["ra"][users_g[:, None], b_g[None, :]] \
                / real.pl[users_g[:, None], b_g[None, :]]
            interference[grp] = np.sum(np.where(same, power, 0.0), axis=0)
        s = signal / (interference + noise)
        ra_sinr[act] = s
        decode[act] = s >= cfg.gamma_ra
    out.ra_collision = collision
    out.ra_decode = decode
    out.ra_sinr = ra_sinr
    out.connected = out.cs_success & ~collision & decode
    return out


def run_data_phase(real: NetworkRealization, out: UserOutcome, proto: Protocol,
                   cfg: SystemConfig) -> UserOutcome:
    U, B = real.n_users, real.n_bs
    n_data = proto.n_data
    g_dl, g_side = user_gains(n_data, cfg)
    side_ratio = g_side / g_dl
    noise = cfg.noise / (cfg.p_bs * proto.m * g_dl)
    conn = np.nonzero(out.connected)[0]
    load = np.zeros(U, int)
    scheduled = np.zeros(U, bool)
    sinr = np.full(U, np.nan)
    if conn.size:
        b0 = out.serving[conn]
        per_bs = np.bincount(b0, minlength=B)
        load[conn] = per_bs[b0]
        # random scheduler: smallest key among a BS's connected users
        order = np.lexsort((real.sched_key[conn], b0))
        first = order[np.r_[True, b0[order][1:] != b0[order][:-1]]]
        chosen = conn[first]
        scheduled[chosen] = True
        active = np.zeros(B, bool)
        active[b0[first]] = True
        beam = np.full(B, -1)
        beam[b0[first]] = sector_index(real.angle[chosen, b0[first]] + math.pi, proto.m)
        # interference at every connected user as if it were the one scheduled
        ang = real.angle[conn]                                   # (C, B)
        bs_cover = sector_index(ang + math.pi, proto.m) == beam[None, :]
        bs_cover &= active[None, :]
        bs_cover[np.arange(conn.size), b0] = False
        if n_data > 1:
            own = sector_index(ang[np.arange(conn.size), b0], n_data)
            ratio = np.where(sector_index(ang, n_data) == own[:, None], 1.0, side_ratio)
        else:
            ratio = 1.0
        rx = real.fading["dl"][conn] / real.pl[conn]
        interference = np.sum(np.where(bs_cover, ratio * rx, 0.0), axis=1)
        signal = rx[np.arange(conn.size), b0]
        sinr[conn] = signal / (interference + noise)
    out.cell_load = load
    out.scheduled = scheduled
    out.dl_sinr = sinr
    return out


def simulate_realization(real: NetworkRealization, proto: Protocol, cfg: SystemConfig) -> UserOutcome:
    out = run_cell_search(real, proto, cfg)
    out = run_random_access(real, out, proto, cfg)
    return run_data_phase(real, out, proto, cfg)


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------

@dataclass
class RealizationRecord:
    stream_id: tuple
    n_users: int
    n_cs: int
    n_no_collision: int
    n_ia: int
    sector_detect_rate: float
    sched_share_sum: float
    rate_sum: float                  # sum of W log2(1 + SINR) / load over connected users
    sinr_counts: tuple               # connected users with SINR >= each threshold
    n_bs: int = 0
    esf_distances: np.ndarray = None  # interior BS -> nearest IA-successful user

    def conserved(self):
        return self.n_ia <= self.n_cs <= self.n_users


def summarize(real: NetworkRealization, out: UserOutcome, cfg: SystemConfig,
              sim: SimulationConfig, stream_id, keep_esf=False) -> RealizationRecord:
    m = real.interior
    conn = out.connected & m
    thresholds = 10.0 ** (np.asarray(sim.sinr_thresholds_db) / 10.0)
    sinr = out.dl_sinr[conn]
    load = out.cell_load[conn]
    esf = None
    if keep_esf:
        ok = out.connected
        bsi = real.bs_interior
        if ok.any() and bsi.any():
            esf = real.dist[ok][:, bsi].min(axis=0)
        else:
            esf = np.full(int(bsi.sum()), np.inf)
    return RealizationRecord(
        stream_id=tuple(stream_id),
        n_users=int(m.sum()),
        n_cs=int((out.cs_success & m).sum()),
        n_no_collision=int((out.cs_success & ~out.ra_collision & m).sum()),
        n_ia=int(conn.sum()),
        sector_detect_rate=float(out.sector_detected[m].mean()) if m.any() else math.nan,
        sched_share_sum=math.fsum(1.0 / load),
        rate_sum=math.fsum(cfg.bandwidth_hz * np.log2(1.0 + sinr) / load),
        sinr_counts=tuple(int(np.sum(sinr >= t)) for t in thresholds),
        n_bs=real.n_bs,
        esf_distances=esf,
    )


def _run_one(args):
    cfg, model, proto, sim, stream_id, keep_esf = args
    real = sample_realization(cfg, model, sim, stream_id)
    out = simulate_realization(real, proto, cfg)
    return summarize(real, out, cfg, sim, stream_id, keep_esf)


@dataclass
class Estimate:
    mean: float
    ci_low: float
    ci_high: float
    n: int

    @classmethod
    def from_samples(cls, x):
        x = np.asarray([v for v in x if np.isfinite(v)], dtype=float)
        if x.size == 0:
            return cls(math.nan, math.nan, math.nan, 0)
        mean = math.fsum(x) / x.size
        if x.size < 2:
            return cls(mean, mean, mean, 1)
        sd = math.sqrt(math.fsum((x - mean) ** 2) / (x.size - 1))
        half = 1.96 * sd / math.sqrt(x.size)
        return cls(mean, mean - half, mean + half, int(x.size))

    def contains(self, value, tol=0.0):
        return self.ci_low - tol <= value <= self.ci_high + tol


@dataclass
class MetricsReport:
    protocol: str
    blockage: str
    m: int
    n_realizations: int
    p_cs_sector: Estimate
    p_cs: Estimate
    p_co: Estimate
    eta_ia: Estimate
    delay_s: Estimate
    sched_prob: Estimate
    upt_bps: Estimate
    dl_ccdf: dict                 # threshold dB -> Estimate
    records: list = field(default_factory=list, repr=False)

    def metric(self, name):
        if name.startswith("dl_ccdf_"):
            return self.dl_ccdf[float(name[len("dl_ccdf_"):])]
        return getattr(self, name)


def _ratio(num, den):
    return num / den if den > 0 else math.nan


def aggregate(records, cfg: SystemConfig, proto: Protocol, model, sim: SimulationConfig) -> MetricsReport:
    cs_slots, ra_slots = proto.ia_duration
    duration = cs_slots * cfg.tau_cs_s + ra_slots * cfg.tau_ra_s
    overhead = min(duration / cfg.cycle_t_s, 1.0)
    eta = Estimate.from_samples([_ratio(r.n_ia, r.n_users) for r in records])

    def delay(e):
        return math.inf if e <= 0 else (1.0 / e - 1.0) * cfg.cycle_t_s + duration

    lo, hi = eta.ci_low, eta.ci_high
    delay_est = Estimate(delay(eta.mean), delay(min(hi, 1.0)), delay(max(lo, 0.0)), eta.n)
    dl = {}
    for k, thr in enumerate(sim.sinr_thresholds_db):
        dl[float(thr)] = Estimate.from_samples([_ratio(r.sinr_counts[k], r.n_ia) for r in records])
    return MetricsReport(
        protocol=proto.name.value if hasattr(proto.name, "value") else str(proto.name),
        blockage=model.label,
        m=proto.m,
        n_realizations=len(records),
        p_cs_sector=Estimate.from_samples([r.sector_detect_rate for r in records]),
        p_cs=Estimate.from_samples([_ratio(r.n_cs, r.n_users) for r in records]),
        p_co=Estimate.from_samples([_ratio(r.n_no_collision, r.n_cs) for r in records]),
        eta_ia=eta,
        delay_s=delay_est,
        sched_prob=Estimate.from_samples([_ratio(r.sched_share_sum, r.n_ia) for r in records]),
        upt_bps=Estimate.from_samples([(1.0 - overhead) * _ratio(r.rate_sum, r.n_users)
                                       for r in records]),
        dl_ccdf=dl,
        records=list(records),
    )


def run_campaign(cfg: SystemConfig, model: BlockageModel, proto: Protocol,
                 sim: SimulationConfig, keep_esf: bool = False) -> MetricsReport:
    if proto.m != cfg.m_antennas or proto.n != cfg.n_antennas:
        raise ConfigError("protocol beam counts disagree with the system config")
    n_bs, n_user = sim.draws
    jobs = [(cfg, model, proto, sim, (i, j), keep_esf) for i in range(n_bs) for j in range(n_user)]
    workers = sim.resolved_workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        records = [_run_one(job) for job in jobs]
    return aggregate(records, cfg, proto, model, sim)


# --------------------------------------------------------------------------
# empty space function of the IA-successful users
# --------------------------------------------------------------------------

@dataclass
class EsfCurve:
    r: np.ndarray
    empirical: np.ndarray
    fitted: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    defined: bool


def compute_esf(distances, r_grid, density, n_boot=200, seed=0) -> EsfCurve:
    """Fraction of BSs whose nearest IA-successful user lies within r.

    ``distances`` holds one array per realization; ``density`` is the intensity
    of IA-successful users (per m^2) of the fitted PPP.
    """
    r = np.asarray(r_grid, dtype=float)
    fitted = 1.0 - np.exp(-density * math.pi * r ** 2)
    per_real = [np.asarray(d, float) for d in distances if d is not None and np.size(d)]
    if not per_real or not any(np.isfinite(d).any() for d in per_real):
        zero = np.zeros_like(r)
        return EsfCurve(r, zero, fitted, zero, zero, defined=False)
    counts = np.array([[np.sum(d <= x) for x in r] for d in per_real], dtype=float)
    sizes = np.array([d.size for d in per_real], dtype=float)
    emp = counts.sum(axis=0) / sizes.sum()
    rng = stream(seed, 2)
    boot = np.empty((n_boot, r.size))
    for b in range(n_boot):
        pick = rng.integers(0, len(per_real), len(per_real))
        boot[b] = counts[pick].sum(axis=0) / sizes[pick].sum()
    lo, hi = np.percentile(boot, [2.5, 97.5], axis=0)
    return EsfCurve(r, emp, fitted, lo, hi, defined=True)


# --------------------------------------------------------------------------
# typical-user oracles for the per-sector detection formulas
# --------------------------------------------------------------------------

def sample_sector_min_pl(cfg: SystemConfig, model: BlockageModel, k_cs: int, n: int,
                         rng: np.random.Generator, radius_m: float = 5000.0,
                         lam: float | None = None) -> np.ndarray:
    """Smallest path loss among PPP points of one 2*pi/k_cs sector, n draws."""
    lam = cfg.lambda_bs if lam is None else lam
    mean = lam * math.pi * radius_m ** 2 / k_cs
    counts = rng.poisson(mean, size=n)
    owner = np.repeat(np.arange(n), counts)
    r = radius_m * np.sqrt(rng.random(owner.size))
    los = rng.random(owner.size) < model.los_probability(r)
    pl = cfg.beta * r ** np.where(los, cfg.alpha_los, cfg.alpha_nlos)
    out = np.full(n, np.inf)
    np.minimum.at(out, owner, pl)
    return out


def laplace_mc(z: float, t: float, lam: float, model: BlockageModel, cfg: SystemConfig,
               n: int, rng: np.random.Generator, from_zero: bool = False,
               radius_m: float = 3000.0):
    """Monte Carlo estimate of V (or U) with its standard error.

    Rayleigh fading turns each interferer into the factor l/(l + t*z); V keeps
    only interferers whose path loss exceeds ``z``.
    """
    counts = rng.poisson(lam * math.pi * radius_m ** 2, size=n)
    owner = np.repeat(np.arange(n), counts)
    r = radius_m * np.sqrt(rng.random(owner.size))
    los = rng.random(owner.size) < model.los_probability(r)
    pl = cfg.beta * r ** np.where(los, cfg.alpha_los, cfg.alpha_nlos)
    logf = np.log(pl / (pl + t * z))
    if not from_zero:
        logf = np.where(pl >= z, logf, 0.0)
    total = np.zeros(n)
    np.add.at(total, owner, logf)
    vals = np.exp(total)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))

