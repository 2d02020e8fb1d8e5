"""Stochastic-geometry evaluation of initial access performance.

All outer integrals over the path loss ``z`` share one composite
Gauss-Legendre grid in ``x = ln z`` (:class:`PathLossGrid`).  Panel edges sit
on the blockage discontinuities, so every panel carries a smooth integrand,
and the detection tail ``int_{z0}^inf Ptilde(z) f(z) dz`` is obtained at every
node from the panel integration matrix rather than by nested quadrature.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre as npleg

from .core import (
    BlockageModel,
    LosBall,
    Protocol,
    SystemConfig,
    nlos_mass,
    user_gains,
)
from .quadrature import (
    DEFAULT_SPEC,
    QuadratureSpec,
    UnboundedInterferenceTable,
    special_u,
    special_v,
)

# mean area of the cell containing a typical user, in units of 1/lambda
CELL_AREA_BIAS = 1.28
# void-probability exponent at which the sector minimum path-loss grid stops
_GRID_EXPONENT_CUTOFF = 40.0
# rate integral truncation
_DL_CCDF_FLOOR = 1e-6
_GAMMA_MIN = 1e-4
# coarse panels of width 5 in ln z covering the sub-reference head
_HEAD_PANELS = 14
_HEAD_WIDTH = 5.0


class _Panels:
    """Composite Gauss-Legendre rule with per-node partial integrals."""

    def __init__(self, edges, widths, order):
        t, w = npleg.leggauss(order)
        los, his = [], []
        for a, b, width in zip(edges[:-1], edges[1:], widths):
            if b <= a:
                continue
            k = max(1, int(math.ceil((b - a) / width)))
            cuts = np.linspace(a, b, k + 1)
            los.extend(cuts[:-1])
            his.extend(cuts[1:])
        self.lo = np.array(los)
        self.hi = np.array(his)
        self.order = order
        half = 0.5 * (self.hi - self.lo)
        self.half = half
        self.x = (0.5 * (self.lo + self.hi))[:, None] + half[:, None] * t[None, :]
        self.w = half[:, None] * w[None, :]
        self._t = t
        # Legendre coefficients of the interpolant from nodal values
        vand = npleg.legvander(t, order - 1)
        self._coef = np.linalg.inv(vand)
        # antiderivative coefficient matrix: column j integrates P_j
        anti = np.zeros((order + 1, order))
        for j in range(order):
            e = np.zeros(order)
            e[j] = 1.0
            anti[:, j] = npleg.legint(e)
        self._anti = anti
        upper = npleg.legval(1.0, anti)           # shape (order,)
        at_nodes = npleg.legvander(t, order) @ anti  # (order, order)
        # S[i, :] @ coef @ g gives int_{t_i}^{1} of the interpolant
        self._s = (upper[None, :] - at_nodes) @ self._coef

    @property
    def n_panels(self):
        return self.lo.size

    def tails(self, g):
        """Return (integral to the right of each node, total) for nodal values ``g``."""
        within = (g @ self._s.T) * self.half[:, None]
        panel = np.sum(g * self.w, axis=1)
        above = np.concatenate([np.cumsum(panel[::-1])[::-1][1:], [0.0]])
        return within + above[:, None], float(math.fsum(panel))

    def tail_at(self, x0, g):
        """Integral of the interpolant of ``g`` from ``x0`` to the last edge."""
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        panel = np.sum(g * self.w, axis=1)
        above = np.concatenate([np.cumsum(panel[::-1])[::-1][1:], [0.0]])
        total = float(math.fsum(panel))
        out = np.empty(x0.size)
        below = x0 <= self.lo[0]
        beyond = x0 >= self.hi[-1]
        out[below] = total
        out[beyond] = 0.0
        mid = ~(below | beyond)
        if mid.any():
            p = np.clip(np.searchsorted(self.hi, x0[mid], side="right"), 0, self.n_panels - 1)
            t = (x0[mid] - self.lo[p]) / self.half[p] - 1.0
            coef = g[p] @ self._coef.T                       # (m, order)
            anti = coef @ self._anti.T                       # (m, order+1)
            upper = npleg.legval(1.0, anti.T)
            at = npleg.legval(t, anti.T, tensor=False)
            out[mid] = (upper - at) * self.half[p] + above[p]
        return out


@dataclass
class IAMetrics:
    p_cs_sector: float
    p_cs: float
    p_co: float
    eta_ia: float
    delay_s: float
    overhead: float
    sched_prob: float
    upt_bps: float
    pdf_mass_error: float = 0.0
    upt_tail_bound: float = 0.0

    def as_dict(self):
        return asdict(self)


class AnalyticContext:
    """Performance of one (system, blockage, protocol) point.

    Derived constants are fixed at construction; the node-level quantities
    behind the outer integrals are computed on first use and cached.
    """

    def __init__(self, cfg: SystemConfig, model: BlockageModel, proto: Protocol,
                 quad: QuadratureSpec = DEFAULT_SPEC, panel_width: float = 0.5,
                 panel_order: int = 16, gamma_panel_width: float = 2.0,
                 gamma_panel_order: int = 8, dl_panel_width: float = 2.0):
        if proto.m != cfg.m_antennas or proto.n != cfg.n_antennas:
            raise ValueError("protocol beam counts disagree with the system config")
        self.cfg = cfg
        self.model = model
        self.proto = proto
        self.quad = quad
        self.outer_quad = quad.relaxed(1e-6)
        self.panel_width = panel_width
        self.panel_order = panel_order
        self.gamma_panel_width = gamma_panel_width
        self.gamma_panel_order = gamma_panel_order
        self.dl_panel_width = dl_panel_width

        self.lam = cfg.lambda_bs
        self.lam_u = cfg.lambda_u
        self.k_cs = proto.k_cs
        self.n_data = proto.n_data
        self.q = proto.q
        if self.q < 1 or self.k_cs % self.n_data:
            raise ValueError("K_cs / N must be a positive integer")
        # user gains: cell search receive, RA transmit, data receive
        self.g_cs, _ = user_gains(proto.n_cs, cfg)
        self.n_ra_eff = max(proto.n_cs, proto.n_ra)
        self.g_ra, g_ra_side = user_gains(self.n_ra_eff, cfg)
        self.ra_side_ratio = g_ra_side / self.g_ra
        self.g_dl, g_dl_side = user_gains(self.n_data, cfg)
        self.dl_side_ratio = g_dl_side / self.g_dl
        # effective noise: thermal noise over transmit power and both gains
        self.noise_cs = cfg.noise / (cfg.p_bs * proto.m_cs * self.g_cs)
        self.noise_ra = cfg.noise / (cfg.p_user * proto.m_ra * self.g_ra)
        self.noise_dl = cfg.noise / (cfg.p_bs * proto.m * self.g_dl)
        cs_slots, ra_slots = proto.ia_duration
        self.ia_duration_s = cs_slots * cfg.tau_cs_s + ra_slots * cfg.tau_ra_s
        self.overhead = min(self.ia_duration_s / cfg.cycle_t_s, 1.0)
        self.sector_rate = 2.0 * math.pi * self.lam / self.k_cs

    # ---------------------------------------------------------------- Lemma 1
    def min_pl_pdf(self, z):
        """Density of the smallest path loss among BSs of one BS sector."""
        cfg, model = self.cfg, self.model
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0):
            raise ValueError("path loss must be positive")
        r_l = (z / cfg.beta) ** (1.0 / cfg.alpha_los)
        r_n = (z / cfg.beta) ** (1.0 / cfg.alpha_nlos)
        a = self.sector_rate
        void = np.exp(-a * (model.los_mass(r_l) + nlos_mass(r_n, model)))
        los_d = (1.0 / cfg.alpha_los) * cfg.beta ** (-2.0 / cfg.alpha_los) \
            * z ** (2.0 / cfg.alpha_los - 1.0) * model.los_probability(r_l)
        nlos_d = (1.0 / cfg.alpha_nlos) * cfg.beta ** (-2.0 / cfg.alpha_nlos) \
            * z ** (2.0 / cfg.alpha_nlos - 1.0) * (1.0 - model.los_probability(r_n))
        out = a * (los_d + nlos_d) * void
        return out if out.ndim else float(out)

    def min_pl_ccdf(self, z):
        """P(Z1 >= z): the void probability of the sector below path loss z."""
        cfg, model = self.cfg, self.model
        z = np.maximum(np.asarray(z, dtype=float), 0.0)
        r_l = (z / cfg.beta) ** (1.0 / cfg.alpha_los)
        r_n = (z / cfg.beta) ** (1.0 / cfg.alpha_nlos)
        out = np.exp(-self.sector_rate * (model.los_mass(r_l) + nlos_mass(r_n, model)))
        return out if out.ndim else float(out)

    # ---------------------------------------------------------------- Lemma 2
    def conditional_detection(self, z):
        """Detection probability of the sector's best BS given its path loss ``z``."""
        z = np.asarray(z, dtype=float)
        g = self.cfg.gamma_cs
        v = special_v(z, g, self.lam / self.k_cs, self.model, self.cfg, self.quad)
        out = np.exp(-g * z * self.noise_cs) * v
        return out if out.ndim else float(out)

    # ------------------------------------------------------------ node grid
    @cached_property
    def _segments(self):
        """Smooth segments of ln z and the panel width used on each."""
        cfg, model = self.cfg, self.model
        # links shorter than the 1 m reference still follow beta*r^alpha, so
        # the support reaches below beta; the head there carries mass ~ z^(1/2)
        x0 = math.log(cfg.beta)
        head = [x0 - _HEAD_WIDTH * k for k in range(_HEAD_PANELS, 0, -1)]
        edges = [x0]
        if isinstance(model, LosBall):
            for alpha in (cfg.alpha_los, cfg.alpha_nlos):
                edges.append(x0 + alpha * math.log(model.radius_rc_m))
        x_max = x0 + 1.0
        if self.sector_rate > 0:
            while -math.log(max(self.min_pl_ccdf(math.exp(x_max)), 1e-300)) < _GRID_EXPONENT_CUTOFF:
                x_max += 0.5
        edges = head + sorted(e for e in edges if e < x_max) + [x_max]
        widths = [_HEAD_WIDTH] * len(head) + [self.panel_width] * (len(edges) - len(head) - 1)
        return np.array(edges), widths

    @cached_property
    def grid(self) -> _Panels:
        return _Panels(*self._segments, self.panel_order)

    @cached_property
    def _nodes(self):
        grid = self.grid
        z = np.exp(grid.x)
        f = self.min_pl_pdf(z) if self.sector_rate > 0 else np.zeros_like(z)
        ptilde = self.conditional_detection(z)
        g = ptilde * f * z          # integrand in x = ln z
        tail, total = grid.tails(g)
        return {"z": z, "f": f, "ptilde": ptilde, "g": g, "tail": tail, "p": total,
                "f_mass": float(np.sum(f * z * grid.w))}

    def sector_detection_prob(self) -> float:
        return float(min(max(self._nodes["p"], 0.0), 1.0))

    def sector_detection_tail(self, z0):
        z0 = np.asarray(z0, dtype=float)
        x0 = np.log(np.maximum(z0, 1e-300))
        out = self.grid.tail_at(x0.ravel(), self._nodes["g"]).reshape(z0.shape)
        out = np.clip(out, 0.0, self.sector_detection_prob())
        return out if out.ndim else float(out)

    # -------------------------------------------------------------- Theorem 1
    def cell_search_success(self) -> float:
        p = self.sector_detection_prob()
        return 1.0 - (1.0 - p) ** self.k_cs

    # ---------------------------------------------------------------- Lemma 3
    def serving_pl_ccdf(self, z0):
        p = self.sector_detection_prob()
        z0 = np.asarray(z0, dtype=float)
        tail = np.where(np.isinf(z0), 0.0, self.sector_detection_tail(np.where(np.isinf(z0), self.cfg.beta, z0)))
        out = (tail + 1.0 - p) ** self.k_cs
        return out if out.ndim else float(out)

    def serving_pl_pdf(self, z0):
        p = self.sector_detection_prob()
        z0 = np.asarray(z0, dtype=float)
        tail = self.sector_detection_tail(z0)
        out = self.k_cs * (tail + 1.0 - p) ** (self.k_cs - 1) \
            * self.conditional_detection(z0) * self.min_pl_pdf(z0)
        return out if np.ndim(out) else float(out)

    # ---------------------------------------------------------------- Lemma 4
    def no_collision_prob(self) -> float:
        if self.lam <= 0:
            return 1.0
        p_hat = self.cell_search_success()
        return math.exp(-CELL_AREA_BIAS * self.lam_u * p_hat
                        / (self.lam * self.cfg.n_pa * self.proto.m_ra))

    # ---------------------------------------------------------------- Lemma 5
    def ra_densities(self):
        """Thinned densities of same-preamble contenders under main and side lobe."""
        base = self.lam_u * self.cell_search_success() / (self.proto.m_ra * self.cfg.n_pa)
        n = self.n_ra_eff
        return base / n, (1.0 - 1.0 / n) * base

    def ra_decode_prob(self, z0):
        z0 = np.asarray(z0, dtype=float)
        finite = np.isfinite(z0)
        zf = np.where(finite, z0, self.cfg.beta)
        g = self.cfg.gamma_ra
        lam_main, lam_side = self.ra_densities()
        out = np.exp(-g * zf * self.noise_ra) \
            * special_u(zf, g, lam_main, self.model, self.cfg, self.quad) \
            * special_u(zf, self.ra_side_ratio * g, lam_side, self.model, self.cfg, self.quad)
        out = np.where(finite, out, 0.0)
        return out if out.ndim else float(out)

    # -------------------------------------------------------------- Theorem 2
    @cached_property
    def _ia_nodes(self):
        n = self._nodes
        p_ra = self.ra_decode_prob(n["z"])
        core = self.k_cs * n["g"] * self.grid.w * p_ra * self.no_collision_prob()
        served = (n["tail"] + 1.0 - n["p"]) ** (self.k_cs - 1)
        return {"core": core, "served": served, "p_ra": p_ra}

    def ia_success(self) -> float:
        n = self._ia_nodes
        eta = float(math.fsum((n["core"] * n["served"]).ravel()))
        return min(max(eta, 0.0), self.cell_search_success())

    # ------------------------------------------------------------------ Eq. 5
    def expected_delay(self) -> float:
        eta = self.ia_success()
        if eta <= 0.0:
            return math.inf
        return (1.0 / eta - 1.0) * self.cfg.cycle_t_s + self.ia_duration_s

    def sched_prob(self) -> float:
        eta = self.ia_success()
        if self.lam <= 0:
            return 0.0
        return 1.0 / (1.0 + CELL_AREA_BIAS * self.lam_u * eta / self.lam)

    # ---------------------------------------------------------------- Lemma 6
    def dl_sinr_ccdf(self, gamma):
        """P(SINR >= gamma | initial access succeeded), gamma linear."""
        gamma = np.asarray(gamma, dtype=float)
        if np.any(gamma <= 0):
            raise ValueError("SINR threshold must be positive")
        if self.ia_success() <= 0:
            out = np.zeros(gamma.shape)
        else:
            out = self._dl_ccdf_raw(gamma.ravel()).reshape(gamma.shape)
        return out if out.ndim else float(out)

    @cached_property
    def _dl_support(self):
        """Coarser node set for the data-phase integral, pruned of negligible nodes."""
        edges, widths = self._segments
        widths = [w if w == _HEAD_WIDTH else self.dl_panel_width for w in widths]
        grid = _Panels(edges, widths, self.panel_order)
        z = np.exp(grid.x).ravel()
        f = self.min_pl_pdf(z)
        g = self.conditional_detection(z) * f * z
        tail = self.sector_detection_tail(z)
        p_ra = self.ra_decode_prob(z)
        core = self.k_cs * g * grid.w.ravel() * p_ra * self.no_collision_prob()
        p = self.sector_detection_prob()
        eta = float(math.fsum(core * (tail + 1.0 - p) ** (self.k_cs - 1)))
        keep = np.abs(core) > 1e-15 * max(np.abs(core).max(), 1e-300)
        return {"z": z[keep], "tail": tail[keep], "core": core[keep], "p": p, "eta": eta}

    @cached_property
    def _u_table(self):
        lo = _GAMMA_MIN * min(self.dl_side_ratio, 1.0) * math.exp(self.grid.lo[0])
        hi = 1e8 * math.exp(self.grid.hi[-1])
        return UnboundedInterferenceTable(self.model, self.cfg, lo, hi, spec=self.quad)

    def _dl_joint(self, gamma):
        """Sum over nodes of the collapsed data-SINR integrand, one value per gamma."""
        s = self._dl_support
        z, tail, core, p = s["z"], s["tail"], s["core"], s["p"]
        lam_i = self.lam / (self.proto.m * self.k_cs)
        u_fn = self._u_table
        out = np.empty(gamma.size)
        step = max(1, 20000 // max(z.size, 1))
        for i in range(0, gamma.size, step):
            gg = gamma[i:i + step, None]
            zz = np.broadcast_to(z[None, :], (gg.shape[0], z.size))
            tt = np.broadcast_to(gg, zz.shape)
            v1 = special_v(zz, tt, lam_i, self.model, self.cfg, self.outer_quad)
            u1 = u_fn(zz, tt, lam_i)
            if self.k_cs > self.q:
                side = self.dl_side_ratio * tt
                v2 = special_v(zz, side, lam_i, self.model, self.cfg, self.outer_quad)
                u2 = u_fn(zz, side, lam_i)
            else:
                v2 = u2 = np.ones_like(zz)
            val = dl_collapsed_integrand(
                np.exp(-tt * zz * self.noise_dl), v1, u1, v2, u2, tail, p,
                self.k_cs, self.q)
            out[i:i + step] = val @ core / self.k_cs
        return out

    def _dl_ccdf_raw(self, gamma):
        eta = self._dl_support["eta"]
        return np.clip(self._dl_joint(np.asarray(gamma, dtype=float)) / eta, 0.0, 1.0)

    # -------------------------------------------------------------- Theorem 3
    @cached_property
    def _rate_integral(self):
        """(int_0^inf P_DL(G)/(1+G) dG, estimate of the truncated tail) in nats."""
        if self.ia_success() <= 0:
            return 0.0, 0.0
        width, order = self.gamma_panel_width, self.gamma_panel_order
        t, w = npleg.leggauss(order)
        # P_DL lies in [P_DL(G_min), 1] below G_min: take the midpoint
        head = float(self._dl_ccdf_raw(np.array([_GAMMA_MIN]))[0])
        total = 0.5 * (1.0 + head) * math.log1p(_GAMMA_MIN)
        y = math.log(_GAMMA_MIN)
        prev = head
        y_stop = math.log(1.0 / (self.cfg.beta * self.noise_dl)) + 30.0
        while True:
            gs = np.exp(y + width * 0.5 * (t + 1.0))
            ccdf = self._dl_ccdf_raw(gs)
            total += float(np.sum(w * 0.5 * width * ccdf * gs / (1.0 + gs)))
            y += width
            last = float(ccdf[-1])
            if last < _DL_CCDF_FLOOR or y > y_stop:
                break
            prev = float(ccdf[0])
        # geometric extrapolation of the decay seen across the last panel
        span = width * 0.5 * (t[-1] - t[0])
        rate = math.log(max(prev, 1e-300) / max(last, 1e-300)) / span if last > 0 else math.inf
        tail = last / rate if rate > 0 else math.inf
        return total, tail

    def average_upt(self) -> float:
        eta = self.ia_success()
        if eta <= 0:
            return 0.0
        integral, _ = self._rate_integral
        return max(0.0, 1.0 - self.overhead) * eta * self.sched_prob() \
            * self.cfg.bandwidth_hz / math.log(2.0) * integral

    # ---------------------------------------------------------------- report
    def metrics(self, with_upt: bool = True) -> IAMetrics:
        eta = self.ia_success()
        return IAMetrics(
            p_cs_sector=self.sector_detection_prob(),
            p_cs=self.cell_search_success(),
            p_co=self.no_collision_prob(),
            eta_ia=eta,
            delay_s=self.expected_delay(),
            overhead=self.overhead,
            sched_prob=self.sched_prob(),
            upt_bps=self.average_upt() if with_upt else math.nan,
            pdf_mass_error=abs(self._nodes["f_mass"] - 1.0) if self.sector_rate > 0 else 0.0,
            upt_tail_bound=(self._rate_integral[1] if with_upt else math.nan),
        )


def dl_collapsed_integrand(noise_term, v1, u1, v2, u2, tail, p, k_cs, q):
    """Data-SINR integrand after summing over detected-sector configurations.

    Excludes the common factor K_cs * Ptilde * P_ra * P_co * f(z).
    """
    main = v1 * tail + u1 * (1.0 - p)
    side = tail * v2 + (1.0 - p) * u2
    return k_cs * noise_term * v1 * main ** (q - 1) * side ** (k_cs - q)


def min_pl_pdf_los_ball_closed_form(z, cfg: SystemConfig, radius_rc: float, k_cs: int,
                                    lam: float):
    """Sector minimum path-loss density for a LOS ball with p = 1."""
    z = np.asarray(z, dtype=float)
    a = 2.0 * math.pi * lam / k_cs
    r_l = (z / cfg.beta) ** (1.0 / cfg.alpha_los)
    r_n = (z / cfg.beta) ** (1.0 / cfg.alpha_nlos)
    los = a / cfg.alpha_los * cfg.beta ** (-2.0 / cfg.alpha_los) * z ** (2.0 / cfg.alpha_los - 1) \
        * np.exp(-0.5 * a * r_l ** 2) * (r_l <= radius_rc)
    nlos = a / cfg.alpha_nlos * cfg.beta ** (-2.0 / cfg.alpha_nlos) * z ** (2.0 / cfg.alpha_nlos - 1) \
        * np.exp(-0.5 * a * r_n ** 2) * (r_n >= radius_rc)
    return los + nlos


def analyze(cfg: SystemConfig, model: BlockageModel, proto: Protocol,
            quad: QuadratureSpec = DEFAULT_SPEC, with_upt: bool = True) -> IAMetrics:
    return AnalyticContext(cfg, model, proto, quad).metrics(with_upt=with_upt)
