"""Per-lemma agreement between the analytic engine and simulated networks."""
import numpy as np
import pytest

from mmwave_ia.analytic import AnalyticContext
from mmwave_ia.core import Exponential, LosBall, Protocol, SystemConfig
from mmwave_ia.simulator import (SimulationConfig, run_campaign, sample_realization,
                                 sample_sector_min_pl, simulate_realization)

CFG = SystemConfig()
MODELS = (LosBall(100, 0.5), Exponential(50))


@pytest.mark.parametrize("model", [LosBall(100, 1.0), LosBall(100, 0.25), Exponential(50)],
                         ids=lambda m: m.label)
@pytest.mark.parametrize("m", [8, 24])
def test_sector_min_path_loss_ks(model, m):
    ctx = AnalyticContext(CFG.with_(m_antennas=m), model, Protocol.build("baseline", m, 4))
    rng = np.random.default_rng(100 + m)
    z = np.sort(sample_sector_min_pl(CFG, model, ctx.k_cs, 100_000, rng, radius_m=2000.0))
    assert np.isfinite(z).all()
    cdf = 1.0 - ctx.min_pl_ccdf(z)
    n = z.size
    ks = max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n))
    assert ks < 0.01


def _pooled(model, name="baseline", m=8, draws=6):
    cfg = CFG.with_(m_antennas=m)
    proto = Protocol.build(name, m, 4)
    sim = SimulationConfig(seed=77)
    rows = {"min_pl": [], "detected": [], "z0": [], "cs": [], "ra_decode": []}
    for i in range(draws):
        real = sample_realization(cfg, model, sim, (i, 0))
        out = simulate_realization(real, proto, cfg)
        keep = real.interior
        rows["min_pl"].append(out.sector_min_pl[keep].ravel())
        rows["detected"].append(out.sector_detected[keep].ravel())
        rows["z0"].append(out.z0[keep])
        rows["cs"].append(out.cs_success[keep])
        rows["ra_decode"].append(out.ra_decode[keep])
    pooled = {k: np.concatenate(v) for k, v in rows.items()}
    return AnalyticContext(cfg, model, proto), pooled


@pytest.fixture(scope="module", params=MODELS, ids=lambda m: m.label)
def pooled(request):
    return _pooled(request.param)


def test_sector_detection_rate(pooled):
    ctx, s = pooled
    assert s["detected"].mean() == pytest.approx(ctx.sector_detection_prob(), abs=0.02)


def test_cell_search_success(pooled):
    ctx, s = pooled
    assert s["cs"].mean() == pytest.approx(ctx.cell_search_success(), abs=0.02)


def _binned(z, hit, predicted, n_bins=10):
    edges = np.quantile(z, np.linspace(0, 1, n_bins + 1))
    idx = np.clip(np.searchsorted(edges, z, side="right") - 1, 0, n_bins - 1)
    gaps = []
    for b in range(n_bins):
        sel = idx == b
        gaps.append(abs(hit[sel].mean() - predicted[sel].mean()))
    return np.array(gaps)


def test_conditional_detection_binned(pooled):
    ctx, s = pooled
    finite = np.isfinite(s["min_pl"])
    z, hit = s["min_pl"][finite], s["detected"][finite]
    assert np.all(_binned(z, hit, ctx.conditional_detection(z)) <= 0.02)


def test_serving_path_loss_ccdf(pooled):
    ctx, s = pooled
    grid = np.geomspace(1e7, 1e16, 200)
    z0 = np.sort(s["z0"])
    emp = 1.0 - np.searchsorted(z0, grid, side="left") / z0.size
    assert np.max(np.abs(emp - ctx.serving_pl_ccdf(grid))) <= 0.02


def test_ra_decode_binned(pooled):
    ctx, s = pooled
    ok = s["cs"]
    z0, hit = s["z0"][ok], s["ra_decode"][ok]
    assert np.all(_binned(z0, hit, ctx.ra_decode_prob(z0)) <= 0.03)


@pytest.mark.xfail(strict=True, reason="the 1.28 cell-size bias gives 1/E[load], not E[1/load]; "
                                       "the simulated mean share is about 40% larger")
def test_scheduling_probability_formula():
    proto = Protocol.build("baseline", 24, 4)
    cfg = CFG.with_(m_antennas=24)
    rep = run_campaign(cfg, LosBall(100, 1.0), proto,
                       SimulationConfig(n_bs_draws=3, n_user_draws=3, seed=5))
    ctx = AnalyticContext(cfg, LosBall(100, 1.0), proto)
    assert rep.sched_prob.mean == pytest.approx(ctx.sched_prob(), abs=0.02)
