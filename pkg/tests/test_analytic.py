import math
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as sint

from mmwave_ia.analytic import (AnalyticContext, analyze, dl_collapsed_integrand,
                                min_pl_pdf_los_ball_closed_form)
from mmwave_ia.core import Exponential, LosBall, Protocol, ProtocolName, SystemConfig

from conftest import TABLE_MODELS, db

CFG = SystemConfig()


def ctx_for(model, name="baseline", m=8, n=4, **changes):
    cfg = CFG.with_(m_antennas=m, n_antennas=n, **changes)
    return AnalyticContext(cfg, model, Protocol.build(name, m, n))


def custom_ctx(model, m_cs, n_cs, m_ra=1, n_ra=1, **changes):
    cfg = CFG.with_(**changes)
    proto = Protocol(ProtocolName.BASELINE, m_cs, n_cs, m_ra, n_ra, m=cfg.m_antennas,
                     n=cfg.n_antennas)
    return AnalyticContext(cfg, model, proto)


def log_quad(fn, ctx, lo=None, hi=None, rel=1e-10):
    """Integrate fn(z) dz over the path-loss support, in the variable ln z."""
    lo = math.log(ctx.cfg.beta) - 70.0 if lo is None else lo
    hi = float(ctx.grid.hi[-1]) + 2.0 if hi is None else hi
    pts = [e for e in ctx._segments[0] if lo < e < hi]
    edges = [lo, *pts, hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = sint.quad(lambda x: fn(math.exp(x)) * math.exp(x), a, b, limit=400,
                           epsabs=1e-14, epsrel=rel)
        total += val
    return total


@pytest.mark.parametrize("model", TABLE_MODELS, ids=lambda m: m.label)
@pytest.mark.parametrize("m", [8, 48])
def test_min_pl_pdf_normalized(model, m):
    ctx = ctx_for(model, m=m)
    assert abs(log_quad(ctx.min_pl_pdf, ctx) - 1.0) <= 1e-6
    assert ctx.metrics(with_upt=False).pdf_mass_error <= 1e-6


def test_min_pl_pdf_omni_sector_normalized():
    ctx = custom_ctx(LosBall(100, 1.0), 1, 1, m_antennas=4, n_antennas=4)
    assert ctx.k_cs == 1
    assert abs(log_quad(ctx.min_pl_pdf, ctx) - 1.0) <= 1e-6


@pytest.mark.parametrize("m", [4, 8, 24, 48])
def test_remark_closed_form(m):
    ctx = ctx_for(LosBall(100, 1.0), m=m)
    z = np.geomspace(db(55), db(150), 2001)
    z = z[np.abs(np.log(z / db(101.4))) > 1e-9]
    z = z[np.abs(np.log(z / db(141.4))) > 1e-9]
    closed = min_pl_pdf_los_ball_closed_form(z, ctx.cfg, 100.0, ctx.k_cs, ctx.lam)
    general = ctx.min_pl_pdf(z)
    assert np.allclose(general, closed, rtol=1e-9, atol=0)


@pytest.mark.parametrize("model", [LosBall(100, 0.5), Exponential(50)], ids=lambda m: m.label)
def test_min_pl_ccdf_integrates_pdf(model):
    ctx = ctx_for(model)
    for z in (db(80), db(101.4), db(120)):
        tail = log_quad(ctx.min_pl_pdf, ctx, lo=math.log(z))
        assert ctx.min_pl_ccdf(z) == pytest.approx(tail, abs=1e-9)


@pytest.mark.parametrize("model", TABLE_MODELS, ids=lambda m: m.label)
def test_sector_detection_matches_scipy(model):
    ctx = ctx_for(model, m=16)
    ref = log_quad(lambda z: ctx.conditional_detection(z) * ctx.min_pl_pdf(z), ctx)
    assert ctx.sector_detection_prob() == pytest.approx(ref, abs=1e-8)


def test_conditional_detection_limits():
    ctx = ctx_for(LosBall(100, 0.5), gamma_cs_db=-math.inf)
    assert np.all(ctx.conditional_detection(np.geomspace(db(60), db(160), 20)) == 1.0)
    ctx = ctx_for(LosBall(100, 0.5))
    assert ctx.conditional_detection(db(250)) < 1e-12


@pytest.mark.parametrize("model", [LosBall(100, 0.25), Exponential(25)], ids=lambda m: m.label)
def test_sector_tail_properties(model):
    ctx = ctx_for(model)
    p = ctx.sector_detection_prob()
    assert ctx.sector_detection_tail(0.0) == pytest.approx(p, abs=1e-15)
    assert ctx.sector_detection_tail(db(400)) == pytest.approx(0.0, abs=1e-15)
    z0 = np.geomspace(1e-3, db(200), 3000)
    tail = ctx.sector_detection_tail(z0)
    assert np.all(np.diff(tail) <= 1e-15)
    # the support reaches a little below the 1 m reference path loss
    assert p - ctx.sector_detection_tail(ctx.cfg.beta) < 1e-4
    for z in (db(90), db(110)):
        ref = log_quad(lambda u: ctx.conditional_detection(u) * ctx.min_pl_pdf(u), ctx,
                       lo=math.log(z))
        assert ctx.sector_detection_tail(z) == pytest.approx(ref, abs=1e-8)


def test_cell_search_boundaries():
    ctx = ctx_for(LosBall(100, 1.0), noise_dbm=100.0)
    assert ctx.cell_search_success() < 1e-12
    ctx = ctx_for(LosBall(100, 1.0), gamma_cs_db=-math.inf)
    assert ctx.cell_search_success() == pytest.approx(1.0, abs=1e-12)
    ctx = ctx_for(Exponential(50))
    p = ctx.sector_detection_prob()
    assert ctx.cell_search_success() == pytest.approx(1 - (1 - p) ** ctx.k_cs, rel=1e-15)


@pytest.mark.parametrize("model", [LosBall(100, 1.0), Exponential(100), Exponential(25)],
                         ids=lambda m: m.label)
def test_serving_pl_distribution(model):
    ctx = ctx_for(model, m=12)
    p_cs = ctx.cell_search_success()
    assert ctx.serving_pl_ccdf(0.0) == pytest.approx(1.0, abs=1e-12)
    assert ctx.serving_pl_ccdf(math.inf) == pytest.approx(1.0 - p_cs, abs=1e-9)
    z0 = np.geomspace(1e-2, db(200), 2000)
    ccdf = ctx.serving_pl_ccdf(z0)
    assert np.all(np.diff(ccdf) <= 1e-15) and np.all((ccdf >= 0) & (ccdf <= 1))
    mass = log_quad(ctx.serving_pl_pdf, ctx, rel=1e-9)
    assert abs(mass - p_cs) <= 1e-6
    # density is minus the derivative of the CCDF
    for z in (db(85), db(105), db(125)):
        h = 1e-4
        deriv = (ctx.serving_pl_ccdf(z * math.exp(-h)) - ctx.serving_pl_ccdf(z * math.exp(h))) / (2 * h * z)
        assert ctx.serving_pl_pdf(z) == pytest.approx(deriv, rel=1e-5)


@pytest.mark.parametrize("model", [LosBall(100, 0.5), Exponential(50)], ids=lambda m: m.label)
def test_serving_ccdf_lighter_tail_with_more_sectors(model):
    z0 = np.geomspace(db(70), db(180), 300)
    curves = [custom_ctx(model, k, 1, n_antennas=1, m_antennas=k).serving_pl_ccdf(z0)
              for k in (2, 4, 8, 16)]
    for a, b in zip(curves[:-1], curves[1:]):
        assert np.all(b <= a + 1e-12)


@pytest.mark.parametrize("model", [LosBall(100, 1.0), LosBall(100, 0.25), Exponential(25)],
                         ids=lambda m: m.label)
def test_cell_search_monotone_in_beams(model):
    grid = (1, 2, 4, 8, 16)
    for fixed in grid:
        by_m = [custom_ctx(model, mc, fixed, m_antennas=16, n_antennas=1).cell_search_success()
                for mc in grid]
        by_n = [custom_ctx(model, fixed, nc, m_antennas=16, n_antennas=1).cell_search_success()
                for nc in grid]
        assert np.all(np.diff(by_m) >= -1e-12)
        assert np.all(np.diff(by_n) >= -1e-12)


def test_omni_cell_search_below_three_quarters():
    ctx = custom_ctx(LosBall(100, 1.0), 1, 1, m_antennas=4, n_antennas=4)
    assert ctx.cell_search_success() < 0.75


def test_no_collision_examples():
    for model in TABLE_MODELS:
        for m in range(8, 49, 4):
            assert ctx_for(model, m=m).no_collision_prob() > 0.95
    for name in ("fast_ra", "omni_rx"):
        assert ctx_for(LosBall(100, 1.0), name=name, m=24).no_collision_prob() == \
            pytest.approx(0.82, abs=0.02)
    assert ctx_for(LosBall(100, 1.0), lambda_u_per_km2=0.0).no_collision_prob() == 1.0


def test_ra_decode_limits():
    ctx = ctx_for(Exponential(50))
    assert ctx.ra_decode_prob(math.inf) == 0.0
    assert np.all(ctx.ra_decode_prob(np.array([db(90), math.inf])) >= 0)
    ctx = ctx_for(Exponential(50), gamma_ra_db=-math.inf)
    assert np.all(ctx.ra_decode_prob(np.geomspace(db(60), db(160), 10)) == 1.0)
    ctx = ctx_for(LosBall(100, 0.5))
    vals = ctx.ra_decode_prob(np.geomspace(db(60), db(180), 100))
    assert np.all(np.diff(vals) <= 1e-15)


def test_ia_equals_cell_search_when_ra_is_free():
    ctx = ctx_for(Exponential(50), lambda_u_per_km2=0.0, gamma_ra_db=-math.inf)
    assert ctx.no_collision_prob() == 1.0
    assert ctx.ia_success() == pytest.approx(ctx.cell_search_success(), abs=1e-6)


def test_no_base_stations():
    ctx = ctx_for(LosBall(100, 1.0), lambda_bs_per_km2=0.0)
    m = ctx.metrics()
    assert m.p_cs == 0.0 and m.eta_ia == 0.0
    assert math.isinf(m.delay_s) and m.upt_bps == 0.0


@pytest.mark.parametrize("name", ["baseline", "fast_ra", "fast_cs", "omni_rx"])
def test_ia_success_matches_dense_grid(name):
    """Independent evaluation of the IA integral on a dense Simpson grid."""
    ctx = ctx_for(LosBall(100, 0.5), name=name, m=16)
    edges = [math.log(ctx.cfg.beta) - 40.0, *[e for e in ctx._segments[0]
                                               if e > math.log(ctx.cfg.beta) - 40.0]]
    # endpoints are nudged inward so that jumps of h(r) are sampled one-sided
    x_parts = [np.linspace(a + 1e-10, b - 1e-10, 4001) for a, b in zip(edges[:-1], edges[1:])]
    g_parts = []
    for x in x_parts:
        z = np.exp(x)
        g_parts.append(ctx.conditional_detection(z) * ctx.min_pl_pdf(z) * z)
    # cumulative integral from the right, piece by piece
    tails, acc = [], 0.0
    for x, g in reversed(list(zip(x_parts, g_parts))):
        part = sint.cumulative_simpson(g[::-1], x=-x[::-1], initial=0.0)[::-1]
        tails.append(part + acc)
        acc += part[0]
    tails = tails[::-1]
    p = acc
    assert ctx.sector_detection_prob() == pytest.approx(p, abs=1e-8)
    eta = 0.0
    for x, g, tail in zip(x_parts, g_parts, tails):
        z = np.exp(x)
        integrand = ctx.k_cs * g * (tail + 1 - p) ** (ctx.k_cs - 1) * ctx.ra_decode_prob(z)
        eta += sint.simpson(integrand, x=x)
    eta *= ctx.no_collision_prob()
    assert ctx.ia_success() == pytest.approx(eta, abs=1e-7)


protocols = st.sampled_from(["baseline", "fast_ra", "fast_cs", "omni_rx"])
m_values = st.sampled_from(list(range(4, 49, 4)))
models = st.sampled_from(TABLE_MODELS)


@given(protocols, m_values, models)
def test_metric_invariants(name, m, model):
    if name == "fast_cs" and m < 4:
        return
    ctx = ctx_for(model, name=name, m=m)
    r = ctx.metrics(with_upt=False)
    for v in (r.p_cs_sector, r.p_cs, r.p_co, r.eta_ia, r.sched_prob):
        assert 0.0 <= v <= 1.0
    assert r.eta_ia <= r.p_cs <= 1.0
    assert r.delay_s >= ctx.ia_duration_s
    assert r.delay_s == pytest.approx((1 / r.eta_ia - 1) * ctx.cfg.cycle_t_s + ctx.ia_duration_s)


def test_delay_decreases_with_success():
    # same overhead, more successful access -> shorter delay
    lo = ctx_for(LosBall(100, 0.25), m=16)
    hi = ctx_for(LosBall(100, 1.0), m=16)
    assert lo.ia_duration_s == hi.ia_duration_s
    assert hi.ia_success() > lo.ia_success()
    assert hi.expected_delay() < lo.expected_delay()


def _explicit_double_sum(noise_term, v1, u1, v2, u2, tail, p, k_cs, q):
    n = k_cs // q
    total = 0.0
    for k in range(1, k_cs + 1):
        for s in range(max(1, k - k_cs + q), min(q, k) + 1):
            weight = n * comb(k_cs - q, k - s) * q * comb(q - 1, s - 1)
            prob_a = tail ** (s - 1) * (1 - p) ** (q - s)
            others = tail ** (k - s) * (1 - p) ** (k_cs - q - k + s)
            cond = noise_term * v1 ** s * u1 ** (q - s) * v2 ** (k - s) * u2 ** (k_cs - q - k + s)
            total += weight * prob_a * others * cond
    return total


@pytest.mark.parametrize("k_cs", [4, 8])
@pytest.mark.parametrize("q", [1, 2])
@given(data=st.data())
def test_binomial_collapse_identity(k_cs, q, data):
    unit = st.floats(0.0, 1.0)
    u1, u2 = data.draw(unit), data.draw(unit)
    v1 = data.draw(st.floats(u1, 1.0))
    v2 = data.draw(st.floats(u2, 1.0))
    p = data.draw(unit)
    tail = data.draw(st.floats(0.0, p))
    noise = data.draw(unit)
    args = (noise, v1, u1, v2, u2, tail, p, k_cs, q)
    assert dl_collapsed_integrand(*args) == pytest.approx(_explicit_double_sum(*args),
                                                          rel=1e-10, abs=1e-10)


@pytest.fixture(scope="module")
def dl_ctx():
    ctx = ctx_for(LosBall(100, 0.5), m=16)
    ctx.dl_sinr_ccdf(1.0)
    return ctx


def test_dl_ccdf_is_conditional_ccdf(dl_ctx):
    assert dl_ctx.dl_sinr_ccdf(1e-7) == pytest.approx(1.0, abs=1e-4)
    g = np.geomspace(1e-3, 1e5, 120)
    ccdf = dl_ctx.dl_sinr_ccdf(g)
    assert np.all((ccdf >= 0) & (ccdf <= 1))
    assert np.all(np.diff(ccdf) <= 1e-12)
    with pytest.raises(ValueError):
        dl_ctx.dl_sinr_ccdf(0.0)


def test_dl_ccdf_right_continuous(dl_ctx):
    for g in (1.0, 10.0, 100.0):
        assert dl_ctx.dl_sinr_ccdf(g * (1 + 1e-9)) == pytest.approx(dl_ctx.dl_sinr_ccdf(g), abs=1e-8)


def test_upt_overhead_clamp():
    ctx = ctx_for(LosBall(100, 1.0), cycle_t_s=1e-4)
    assert ctx.overhead == 1.0
    assert ctx.average_upt() == 0.0


@pytest.mark.slow
def test_upt_grid_refinement():
    model = Exponential(50)
    cfg = CFG.with_(m_antennas=24)
    proto = Protocol.build("baseline", 24, 4)
    coarse = AnalyticContext(cfg, model, proto)
    fine = AnalyticContext(cfg, model, proto, panel_width=0.25, gamma_panel_width=1.0,
                           dl_panel_width=1.0)
    assert coarse.average_upt() == pytest.approx(fine.average_upt(), rel=1e-4)
    assert coarse.metrics().upt_tail_bound / coarse._rate_integral[0] < 1e-4


def test_analysis_is_deterministic():
    a = analyze(CFG, Exponential(100), Protocol.build("fast_cs", 8, 4), with_upt=False)
    b = analyze(CFG, Exponential(100), Protocol.build("fast_cs", 8, 4), with_upt=False)
    assert a == b


def test_mismatched_protocol_rejected():
    with pytest.raises(ValueError):
        AnalyticContext(CFG, Exponential(100), Protocol.build("baseline", 16, 4))
