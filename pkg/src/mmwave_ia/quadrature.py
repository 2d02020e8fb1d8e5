"""Adaptive Gauss-Kronrod quadrature and the Laplace-functional factors V, U.

The engine integrates many independent integrands at once.  Every element
lives on its own interval ``[a, b]`` (``b`` may be ``inf``) which is pulled back
to ``t in [0, 1]`` through a cubic smoothing map (weak endpoint singularities
such as ``x**-0.5`` become regular) followed, for semi-infinite intervals, by
``x = a + L*s/(1-s)``.  Subintervals in ``t`` are bisected until each one
carries no more than its width share of the element tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import BlockageModel, SystemConfig

# 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21)
_XGK = np.array([
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.0])
_WGK = np.array([
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077208015291124, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821])
_WG = np.array([
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338])

KRONROD_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS_WEIGHTS = np.zeros(21)
GAUSS_WEIGHTS[1:10:2] = _WG
GAUSS_WEIGHTS[11:20:2] = _WG[::-1]

_CHUNK_NODES = 4_000_000


class ConvergenceError(RuntimeError):
    """Adaptive refinement hit its subdivision cap before meeting tolerance."""

    def __init__(self, message, value=None, error=None):
        super().__init__(message)
        self.value = value
        self.error = error


@dataclass(frozen=True)
class QuadratureSpec:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_subdivisions: int = 256
    tail_cutoff_rule: str = "x = a + L*s/(1-s) on s in (0,1]"

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_subdivisions < 8:
            raise ValueError("max_subdivisions must be >= 8")

    def relaxed(self, rel_tol=1e-6) -> "QuadratureSpec":
        return QuadratureSpec(max(rel_tol, self.rel_tol), self.abs_tol,
                              self.max_subdivisions, self.tail_cutoff_rule)


DEFAULT_SPEC = QuadratureSpec()


def _map(t, a, b, scale, infinite):
    """Map t in [0,1] to x; return (x, dx/dt)."""
    s = t * t * (3.0 - 2.0 * t)
    ds = 6.0 * t * (1.0 - t)
    width = np.where(infinite, 0.0, b - a)
    one_minus = 1.0 - s
    with np.errstate(divide="ignore", invalid="ignore"):
        x_inf = a + scale * s / one_minus
        j_inf = scale / (one_minus * one_minus)
    x = np.where(infinite, x_inf, a + width * s)
    jac = np.where(infinite, j_inf, width) * ds
    return x, jac


def integrate_batch(f: Callable, a, b, spec: QuadratureSpec = DEFAULT_SPEC,
                    scale=None, strict: bool = True):
    """Integrate ``f`` over ``[a[i], b[i]]`` for every element ``i``.

    ``f(x, idx)`` receives abscissae ``x`` and the element index of each
    abscissa and must return integrand values of the same shape.  Returns
    ``(values, errors)``.  ``scale`` sets the length scale of the
    semi-infinite map (default ``max(|a|, 1)``).
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), a.shape).copy()
    n = a.size
    if np.any(~(b > a) & ~(b == a)):
        raise ValueError("integration needs a <= b")
    infinite = np.isinf(b)
    if scale is None:
        scale = np.maximum(np.abs(a), 1.0)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), a.shape)

    done_val = np.zeros(n)
    done_err = np.zeros(n)
    failed = np.zeros(n, dtype=bool)
    live = b > a

    # interval pool: element id, lo, hi in t
    n_init = 4
    ids = np.repeat(np.nonzero(live)[0], n_init)
    lo = np.tile(np.arange(n_init) / n_init, int(live.sum()))
    hi = lo + 1.0 / n_init
    max_depth = int(math.ceil(math.log2(spec.max_subdivisions))) + 2
    depth = 0
    while ids.size:
        val, err = _gk_eval(f, ids, lo, hi, a, b, scale, infinite)
        act_val = np.bincount(ids, weights=val, minlength=n)
        act_err = np.bincount(ids, weights=err, minlength=n)
        total = done_val + act_val
        tol = np.maximum(spec.rel_tol * np.abs(total), spec.abs_tol)
        elem_ok = (done_err + act_err) <= tol
        width = hi - lo
        accept = elem_ok[ids] | (err <= tol[ids] * width)
        if depth >= max_depth:
            failed[np.unique(ids[~accept])] = True
            accept[:] = True
        np.add.at(done_val, ids[accept], val[accept])
        np.add.at(done_err, ids[accept], err[accept])
        keep = ~accept
        ids, lo, hi = ids[keep], lo[keep], hi[keep]
        mid = 0.5 * (lo + hi)
        ids = np.concatenate([ids, ids])
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        depth += 1

    if strict and failed.any():
        raise ConvergenceError(
            f"{int(failed.sum())} integral(s) did not converge within "
            f"{spec.max_subdivisions} subdivisions", done_val, done_err)
    return done_val, done_err


def _gk_eval(f, ids, lo, hi, a, b, scale, infinite):
    m = ids.size
    vals = np.empty(m)
    errs = np.empty(m)
    step = max(1, _CHUNK_NODES // 21)
    for s in range(0, m, step):
        sl = slice(s, s + step)
        i = ids[sl]
        half = 0.5 * (hi[sl] - lo[sl])
        center = 0.5 * (hi[sl] + lo[sl])
        t = center[:, None] + half[:, None] * KRONROD_NODES[None, :]
        x, jac = _map(t, a[i, None], b[i, None], scale[i, None], infinite[i, None])
        idx = np.broadcast_to(i[:, None], t.shape)
        fx = np.asarray(f(x, idx), dtype=float) * jac
        fx = np.where(jac == 0.0, 0.0, fx)
        k = fx @ KRONROD_WEIGHTS * half
        g = fx @ GAUSS_WEIGHTS * half
        vals[sl] = k
        errs[sl] = np.abs(k - g)
    return vals, errs


def integrate(f: Callable, a: float, b: float, spec: QuadratureSpec = DEFAULT_SPEC,
              breakpoints: Sequence[float] = (), scale: float | None = None):
    """Integrate a scalar function (vectorized over its argument) on ``[a, b]``.

    ``b`` may be ``math.inf``.  Interior ``breakpoints`` split the domain so
    that discontinuities of ``f`` sit on subinterval ends.  Returns
    ``(value, error_estimate)``; raises :class:`ConvergenceError` carrying the
    best estimate when the tolerance cannot be met.
    """
    if not a < b:
        raise ValueError("integrate needs a < b")
    cuts = sorted(p for p in breakpoints if a < p < b)
    edges = [a, *cuts, b]
    lo = np.array(edges[:-1], dtype=float)
    hi = np.array(edges[1:], dtype=float)
    sc = None if scale is None else np.full(lo.shape, float(scale))
    try:
        vals, errs = integrate_batch(lambda x, idx: f(x), lo, hi, spec, scale=sc)
    except ConvergenceError as exc:
        raise ConvergenceError(str(exc), float(np.sum(exc.value)),
                               float(np.sum(exc.error))) from None
    return float(math.fsum(vals)), float(np.sum(errs))


# ---------------------------------------------------------------------------
# Laplace-functional factors of the interference field
# ---------------------------------------------------------------------------

def _interference_exponent(c, a_los, a_nlos, model: BlockageModel, cfg: SystemConfig,
                           spec: QuadratureSpec):
    """Sum of the LOS and NLOS integrals of c*w(r)*r/(c + l(r)) for each element.

    ``c = T*z``; LOS integrals start at ``a_los``, NLOS ones at ``a_nlos``.
    """
    c = np.asarray(c, dtype=float).ravel()
    a_los = np.broadcast_to(a_los, c.shape).ravel()
    a_nlos = np.broadcast_to(a_nlos, c.shape).ravel()
    out = np.zeros(c.size)
    work = np.nonzero(c > 0)[0]
    if not work.size:
        return out

    support = model.los_support
    cuts = [p for p in model.breakpoints]
    # piece table: (element, lo, hi, alpha, los flag)
    pe, plo, phi, palpha, plos = [], [], [], [], []

    def add(el, lo, hi, alpha, los):
        keep = hi > lo
        pe.append(el[keep]); plo.append(lo[keep]); phi.append(hi[keep])
        palpha.append(np.full(int(keep.sum()), alpha)); plos.append(np.full(int(keep.sum()), los))

    for los, alpha, start, stop in ((True, cfg.alpha_los, a_los[work], support),
                                    (False, cfg.alpha_nlos, a_nlos[work], math.inf)):
        edges = [start] + [np.maximum(start, p) for p in cuts if p < stop] + [np.maximum(start, stop)]
        for lo_e, hi_e in zip(edges[:-1], edges[1:]):
            add(work, np.asarray(lo_e, float), np.asarray(hi_e, float), alpha, los)

    el = np.concatenate(pe)
    lo = np.concatenate(plo)
    hi = np.concatenate(phi)
    alpha = np.concatenate(palpha)
    los = np.concatenate(plos)
    cc = c[el]
    rc = (cc / cfg.beta) ** (1.0 / alpha)
    # LOS mass cannot spread beyond a few blockage lengths
    reach = np.where(los, np.minimum(rc, 10.0 * model.los_length), rc)
    scale = np.maximum(np.maximum(lo, reach), 1.0)
    beta = cfg.beta

    def integrand(r, idx):
        w = model.los_probability(r)
        w = np.where(los[idx], w, 1.0 - w)
        ci = cc[idx]
        return ci * w * r / (ci + beta * r ** alpha[idx])

    vals, _ = integrate_batch(integrand, lo, hi, spec, scale=scale)
    np.add.at(out, el, vals)
    return out


def _laplace(z, t, lam, model, cfg, spec, from_zero):
    z, t, lam = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (z, t, lam)))
    shape = z.shape
    z, t, lam = z.ravel(), t.ravel(), lam.ravel()
    if np.any(t < 0) or np.any(lam < 0):
        raise ValueError("threshold and density must be nonnegative")
    out = np.ones(z.size)
    work = (t > 0) & (lam > 0)
    if work.any():
        zw = z[work]
        if from_zero:
            a_l = a_n = np.zeros(zw.size)
        else:
            if np.any(zw <= 0):
                raise ValueError("path loss must be positive")
            a_l = (zw / cfg.beta) ** (1.0 / cfg.alpha_los)
            a_n = (zw / cfg.beta) ** (1.0 / cfg.alpha_nlos)
        expo = _interference_exponent(t[work] * zw, a_l, a_n, model, cfg, spec)
        out[work] = np.exp(-2.0 * math.pi * lam[work] * expo)
    out = out.reshape(shape)
    return out if out.ndim else float(out)


def special_v(z, t, lam, model: BlockageModel, cfg: SystemConfig,
              spec: QuadratureSpec = DEFAULT_SPEC):
    """Interference factor with no interferer stronger than path loss ``z``.

    ``t`` is the (linear) threshold multiplying ``z``, ``lam`` the interferer
    density in m^-2.  Broadcasts over its array arguments.
    """
    return _laplace(z, t, lam, model, cfg, spec, from_zero=False)


def special_u(z, t, lam, model: BlockageModel, cfg: SystemConfig,
              spec: QuadratureSpec = DEFAULT_SPEC):
    """Interference factor for an unconstrained interferer field (integrals from 0)."""
    return _laplace(z, t, lam, model, cfg, spec, from_zero=True)


class UnboundedInterferenceTable:
    """Spline of the U exponent over ``ln c`` for one blockage model.

    With both integrals starting at 0 the exponent of U depends on ``z`` and
    ``t`` only through ``c = t*z``, so a single table in ``ln c`` serves every
    evaluation.  Values of ``c`` outside the table fall back to quadrature.
    """

    def __init__(self, model: BlockageModel, cfg: SystemConfig, c_lo: float, c_hi: float,
                 step: float = 0.05, spec: QuadratureSpec = DEFAULT_SPEC):
        from scipy.interpolate import CubicSpline

        self.model, self.cfg, self.spec = model, cfg, spec
        lo, hi = math.log(c_lo) - 4 * step, math.log(c_hi) + 4 * step
        self.ln_c = np.linspace(lo, hi, int(math.ceil((hi - lo) / step)) + 1)
        zeros = np.zeros(self.ln_c.size)
        expo = _interference_exponent(np.exp(self.ln_c), zeros, zeros, model, cfg, spec)
        self._spline = CubicSpline(self.ln_c, np.log(expo))

    def exponent(self, c):
        c = np.asarray(c, dtype=float)
        out = np.zeros(c.shape)
        pos = c > 0
        lc = np.log(np.where(pos, c, 1.0))
        inside = pos & (lc >= self.ln_c[0]) & (lc <= self.ln_c[-1])
        out[inside] = np.exp(self._spline(lc[inside]))
        outside = pos & ~inside
        if outside.any():
            zeros = np.zeros(int(outside.sum()))
            out[outside] = _interference_exponent(c[outside], zeros, zeros, self.model,
                                                  self.cfg, self.spec)
        return out

    def __call__(self, z, t, lam):
        z, t, lam = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (z, t, lam)))
        return np.exp(-2.0 * math.pi * lam * self.exponent(t * z))
