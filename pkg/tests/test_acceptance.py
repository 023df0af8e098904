"""Acceptance suite: one verdict line per criterion, printed in the terminal summary.

Criteria 6 to 8 need the full three-seed comparison (collect, train every
method, evaluate). Set ``TACORL_ACCEPT_RUN`` to a directory holding a
finished ``comparison.json`` to reuse it; otherwise the run happens here.
"""
import json
import os
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest
from scipy import stats

from _gradcases import CASES
from conftest import ACCEPTANCE_LINES
from tacorl import rngs, scripted
from tacorl.datastore import EPS_SCENE, Dataset, build_proprio_index, mine_negative, sample_window, stack_windows
from tacorl.experiment import run_comparison
from tacorl.hrl import (
    CqlHyperParams,
    GoalSamplerConfig,
    LatentActor,
    TransitionBatch,
    bellman_target,
    cql_critic_loss,
    goal_for_offset,
    sample_goal,
)
from tacorl.lmp import LatentPlanModel, LmpHyperParams, lmp_loss
from tacorl.networks import Critic
from tacorl.numcore import tensor as T
from tacorl.numcore.distributions import (
    BinSpec,
    GaussianParams,
    LogisticMixtureParams,
    gaussian_kl,
    kl_balanced,
    logistic_mixture_bin_logmass,
)
from tacorl.numcore.gradcheck import check_gradients, numeric_grad
from tacorl.numcore.tensor import Tensor
from tacorl.playtable import PROPRIO, SCENE

TOL_GRAD = 1e-4
GRAD_SECONDS = 60.0
MC_SAMPLES = 10**6
MC_SIGMAS = 3.0
BIN_SUM_TOL = 1e-6
CHI2_P = 0.01
NEG_FRACTION, NEG_TOL = 0.10, 0.01
RECOMP_TOL = 1e-8
KL_ID_TOL = 1e-12
TWO_TASK_RATIO = 1.5
BUDGET_SECONDS = 3600.0


def verdict(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


# ------------------------------------------------------------------ 1


def test_criterion_1_gradient_integrity():
    t0 = time.perf_counter()
    worst = {}
    for name, make in sorted(CASES.items()):
        worst[name] = max(check_gradients(*make(np.random.default_rng(1000 + k))) for k in range(10))
    # the balanced KL has a deliberately split gradient: check each share against FD of plain KL
    rng = np.random.default_rng(7)
    for _ in range(10):
        q = GaussianParams(Tensor(rng.normal(size=4), True), Tensor(rng.normal(size=4), True))
        p = GaussianParams(Tensor(rng.normal(size=4), True), Tensor(rng.normal(size=4), True))
        kl_balanced(q, p, 0.8).backward()
        for prm, share in [(p.mean, 0.8), (p.log_std, 0.8), (q.mean, 0.2), (q.log_std, 0.2)]:
            fd = share * numeric_grad(lambda: gaussian_kl(q, p), prm)
            err = np.max(np.abs(prm.grad - fd) / np.maximum(np.abs(fd), 1e-6))
            worst["kl_balanced"] = max(worst.get("kl_balanced", 0.0), float(err))
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if v >= TOL_GRAD}
    verdict(1, not bad and elapsed < GRAD_SECONDS,
            f"{len(worst)} ops x 10 points, max rel err {max(worst.values()):.2e} (< {TOL_GRAD:g}), "
            f"{elapsed:.1f}s (< {GRAD_SECONDS:g}s){'; failing: ' + ', '.join(bad) if bad else ''}")


# ------------------------------------------------------------------ 2


def _mc_kl(rng, mq, sq, mp, sp):
    x = mq + sq * rng.standard_normal((MC_SAMPLES, len(mq)))
    lq = stats.norm.logpdf(x, mq, sq).sum(axis=1)
    lp = stats.norm.logpdf(x, mp, sp).sum(axis=1)
    d = lq - lp
    return d.mean(), d.std(ddof=1) / np.sqrt(MC_SAMPLES)


def test_criterion_2_distribution_oracles():
    rng = np.random.default_rng(0)
    kl_z = []
    for _ in range(3):
        mq, mp = rng.normal(size=3), rng.normal(size=3)
        lq, lp = rng.uniform(-0.5, 0.5, size=3), rng.uniform(-0.5, 0.5, size=3)
        exact = float(gaussian_kl(GaussianParams(Tensor(mq), Tensor(lq)), GaussianParams(Tensor(mp), Tensor(lp))).data)
        est, se = _mc_kl(rng, mq, np.exp(lq), mp, np.exp(lp))
        kl_z.append(abs(est - exact) / se)
    kl_ok = max(kl_z) < MC_SIGMAS

    bins = BinSpec(256)
    worst_sum = 0.0
    for _ in range(50):
        mix = LogisticMixtureParams(Tensor(rng.normal(size=(2, 10))), Tensor(rng.uniform(-1.2, 1.2, size=(2, 10))),
                                    Tensor(rng.uniform(-6.0, 0.5, size=(2, 10))))
        sums = np.exp(logistic_mixture_bin_logmass(mix, bins)).sum(axis=-1)
        worst_sum = max(worst_sum, float(np.max(np.abs(sums - 1.0))))
    bins_ok = worst_sum <= BIN_SUM_TOL

    ds = Dataset(scripted.scripted_collect(rngs.stream(0, "accept-geom"), 4, 1000))
    cfg = GoalSamplerConfig(positive_fraction=1.0)
    starts = rng.choice(ds.valid_starts(16), size=10**5)
    deltas = np.array([sample_goal(rng, cfg, ds, int(t))[3] for t in starts])
    pmf = np.array([0.3 * 0.7 ** (d - 1) for d in range(1, 8)])
    expected = np.append(pmf, 1.0 - pmf.sum()) * len(deltas)
    observed = np.append(np.bincount(deltas, minlength=9)[1:8], (deltas >= 8).sum())
    chi_p = stats.chisquare(observed, expected).pvalue
    geo_ok = chi_p > CHI2_P

    verdict(2, kl_ok and bins_ok and geo_ok,
            f"KL vs 1e6-sample MC max |z| {max(kl_z):.2f} (< {MC_SIGMAS:g}); "
            f"bin mass sum max dev {worst_sum:.1e} (<= {BIN_SUM_TOL:g}); "
            f"geometric chi-square p {chi_p:.3f} (> {CHI2_P:g})")


# ------------------------------------------------------------------ 3


def test_criterion_3_relabeling():
    ep = scripted.scripted_collect(rngs.stream(0, "accept-relabel"), 1, 200)
    ds = Dataset(ep)
    end = 199
    mismatches = 0
    pairs = 0
    for t in range(200 - 15):
        for delta in range(1, 15):
            gi, r = goal_for_offset(ds, t, delta, 15)
            pairs += 1
            if gi != min(t + 15 * delta, end) or r != (1.0 if delta == 1 else 0.0):
                mismatches += 1
        # sampled draws agree with the enumeration
        for seed in range(10):
            goal, r, neg, delta = sample_goal(np.random.default_rng(seed), GoalSamplerConfig(), ds, t)
            if neg:
                mismatches += r != 0.0
            else:
                gi, r_enum = goal_for_offset(ds, t, delta, 15)
                mismatches += (r != r_enum) or not np.array_equal(goal, ds.observations[gi])

    big = Dataset(scripted.scripted_collect(rngs.stream(1, "accept-relabel"), 4, 1000))
    rng = np.random.default_rng(3)
    starts = rng.choice(big.valid_starts(16), size=10**5)
    neg = np.array([sample_goal(rng, GoalSamplerConfig(), big, int(t))[2] for t in starts])
    neg_frac = float(neg.mean())

    obs = rng.uniform(0, 1, size=(1000, 9))
    obs[:, 2] = rng.choice([-1.0, 1.0], size=1000)
    idx = build_proprio_index(obs)
    mine_bad = 0
    for _ in range(100):
        anchor = obs[rng.integers(1000)] + np.r_[rng.normal(0, 0.02, 2), 0.0, np.zeros(6)]
        d_p = np.linalg.norm(obs[:, PROPRIO] - anchor[PROPRIO], axis=1)
        d_s = np.linalg.norm(obs[:, SCENE] - anchor[SCENE], axis=1)
        expect = np.flatnonzero((d_p <= 0.05) & (d_s >= EPS_SCENE))
        seed = int(rng.integers(2**31))
        got, fallback = mine_negative(idx, obs, anchor, np.random.default_rng(seed))
        if len(expect):
            pick = expect[np.random.default_rng(seed).integers(len(expect))]
            mine_bad += fallback or not np.array_equal(got, obs[pick])
        else:
            mine_bad += not fallback

    verdict(3, mismatches == 0 and abs(neg_frac - NEG_FRACTION) <= NEG_TOL and mine_bad == 0,
            f"{pairs} (window, offset) pairs + 1850 draws, {mismatches} reward/goal mismatches; "
            f"negative fraction {neg_frac:.4f} ({NEG_FRACTION} +- {NEG_TOL}); "
            f"mine_negative vs brute force {100 - mine_bad}/100")


# ------------------------------------------------------------------ 4


def _mp_log_sigmoid(x):
    return -mpmath.log1p(mpmath.e ** (-x)) if x > 0 else x - mpmath.log1p(mpmath.e ** x)


def _mp_bin_logmass(mean, log_scale, lo, hi):
    s = mpmath.e ** mpmath.mpf(log_scale)
    cdf = lambda v: 1 / (1 + mpmath.e ** (-(v - mpmath.mpf(mean)) / s))
    upper = mpmath.mpf(1) if hi is None else cdf(mpmath.mpf(hi))
    lower = mpmath.mpf(0) if lo is None else cdf(mpmath.mpf(lo))
    return mpmath.log(upper - lower)


def _lmp_straight_line(model, obs, act, mask, parts):
    mpmath.mp.dps = 50
    with T.no_grad():
        mix, grip = model.decoder(obs, Tensor(parts["z"]))
    bins = model.bins
    targets = act[..., :2] / 0.05
    B, n = mask.shape
    nll = mpmath.mpf(0)
    for b in range(B):
        for t in range(n):
            if not mask[b, t]:
                continue
            for d in range(2):
                x = float(targets[b, t, d])
                k = min(max(int(np.floor((min(max(x, -1.0), 1.0) + 1.0) / bins.width)), 0), bins.n_bins - 1)
                lo = None if k == 0 else float(bins.edges[k])
                hi = None if k == bins.n_bins - 1 else float(bins.edges[k + 1])
                logits = [mpmath.mpf(float(v)) for v in mix.logits.data[b, t, d]]
                norm = mpmath.log(sum(mpmath.e ** v for v in logits))
                comps = [logits[c] - norm + _mp_bin_logmass(mix.means.data[b, t, d, c],
                                                             mix.log_scales.data[b, t, d, c], lo, hi)
                         for c in range(10)]
                nll -= mpmath.log(sum(mpmath.e ** v for v in comps))
            g = mpmath.mpf(float(grip.data[b, t]))
            nll -= _mp_log_sigmoid(g) if act[b, t, 2] > 0 else _mp_log_sigmoid(-g)
    nll = float(nll / B)
    q, p = parts["q"], parts["p"]
    mq, lq, mp_, lp = q.mean.data, q.log_std.data, p.mean.data, p.log_std.data
    kl = float(np.mean(np.sum(lp - lq + 0.5 * (np.exp(2 * (lq - lp)) + ((mq - mp_) / np.exp(lp)) ** 2) - 0.5, axis=1)))
    return nll, kl


def _np_mlp(mlp, x):
    n = len(mlp.layers)
    for i, layer in enumerate(mlp.layers):
        x = x @ layer.weight.data + layer.bias.data
        if i < n - 1:
            x = np.maximum(x, 0.0)
    return x


def _np_critic(c, s, a, g):
    h = np.concatenate([_np_mlp(c.embed.net, s), _np_mlp(c.embed.net, g), a])
    return float(_np_mlp(c.net, h)[0])


def test_criterion_4_loss_recomputation():
    hp = LmpHyperParams(embed_dim=8, enc_width=16, enc_heads=2, enc_blocks=1, enc_ff=16, prior_width=16,
                        prior_layers=2, dec_hidden=16, dec_layers=1, beta=0.25)
    model = LatentPlanModel(hp, np.random.default_rng(42))
    ds = Dataset(scripted.scripted_collect(rngs.stream(0, "accept-recomp"), 2, 300))
    rng = np.random.default_rng(5)
    obs, act, mask = stack_windows([sample_window(rng, ds) for _ in range(3)])
    total, parts = lmp_loss(model, obs, act, mask, np.random.default_rng(6))
    nll, kl = _lmp_straight_line(model, obs, act, mask, parts)
    lmp_err = max(abs(parts["nll"] - nll) / abs(nll), abs(parts["kl"] - kl) / abs(kl),
                  abs(float(total.data) - (nll + 0.25 * kl)) / abs(nll + 0.25 * kl))

    # critic loss: every weight 0.1, one transition, a hand-written OOD set
    chp = CqlHyperParams(critic_width=4, critic_layers=2, n_ood=2)
    critics = [Critic(np.random.default_rng(i), 2, width=4, layers=2) for i in range(2)]
    for c in critics:
        for prm in c.parameters():
            prm.data = np.full_like(prm.data, 0.1)
    critics[1].net.layers[-1].bias.data[:] = -0.3
    s, g = np.full(9, 0.2), np.full(9, 0.6)
    batch = TransitionBatch(s[None], np.array([[0.3, -0.4]]), np.full((1, 9), 0.1), g[None], np.array([0.0]))
    cand = [[0.9, -0.9], [-0.2, 0.5], [0.1, 0.1], [0.4, -0.7]]
    ood = {"uniform": np.array([cand[:2]]), "policy": np.array([cand[2:]]), "policy_logp": np.array([[0.8, -1.1]])}
    loss, _ = cql_critic_loss(batch, critics, None, None, chp, None, target=np.array([0.42]), ood=ood)
    corr = [2 * np.log(2.0), 2 * np.log(2.0), -0.8, 1.1, 0.0]
    expect = 0.0
    for c in critics:
        qs = [_np_critic(c, s, np.array(a), g) for a in cand + [[0.3, -0.4]]]
        lse = np.log(sum(np.exp(qv + cv) for qv, cv in zip(qs, corr)))
        expect += (qs[-1] - 0.42) ** 2 + lse - qs[-1]
    cql_err = abs(float(loss.data) - expect) / abs(expect)

    actor = LatentActor(model.prior.clone())
    huge = [Critic(np.random.default_rng(i), 16) for i in range(2)]
    for c in huge:
        c.net.layers[-1].bias.data[:] = 1e6
    r1 = bellman_target(np.ones(32), rng.uniform(size=(32, 9)), rng.uniform(size=(32, 9)), huge, actor, 0.95, rng)
    r1_ok = bool(np.all(r1 == 1.0))

    verdict(4, lmp_err <= RECOMP_TOL and cql_err <= RECOMP_TOL and r1_ok,
            f"lmp_loss rel err {lmp_err:.1e}, cql_critic_loss rel err {cql_err:.1e} (<= {RECOMP_TOL:g}); "
            f"bellman_target(r=1) == 1 exactly: {r1_ok}")


# ------------------------------------------------------------------ 5


def test_criterion_5_kl_balancing():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 17))
        q = GaussianParams(Tensor(rng.normal(size=d)), Tensor(rng.normal(size=d)))
        p = GaussianParams(Tensor(rng.normal(size=d)), Tensor(rng.normal(size=d)))
        worst = max(worst, abs(float(kl_balanced(q, p, 0.8).data) - float(gaussian_kl(q, p).data)))
    ratios, resid = [], 0.0
    for _ in range(10):
        # symmetric configuration: q and p differ only by a mean shift
        m, ls = rng.normal(size=4), rng.normal(size=4) * 0.3
        q = GaussianParams(Tensor(m + 0.5, True), Tensor(ls.copy(), True))
        p = GaussianParams(Tensor(m, True), Tensor(ls.copy(), True))
        kl_balanced(q, p, 0.8).backward()
        fd_p = numeric_grad(lambda: gaussian_kl(q, p), p.mean)
        fd_q = numeric_grad(lambda: gaussian_kl(q, p), q.mean)
        ratios.append(np.linalg.norm(p.mean.grad) / np.linalg.norm(q.mean.grad))
        resid = max(resid, float(np.max(np.abs(p.mean.grad - 0.8 * fd_p))),
                    float(np.max(np.abs(q.mean.grad - 0.2 * fd_q))))
    split = np.array(ratios)
    ok = worst <= KL_ID_TOL and np.allclose(split, 4.0, rtol=1e-6) and resid < 1e-7
    verdict(5, ok, f"max |balanced - plain| {worst:.1e} (<= {KL_ID_TOL:g}) over 100 pairs; "
                   f"prior:encoder gradient norm ratio {split.mean():.6f} (expect 4 = 0.8:0.2), FD residual {resid:.1e}")


# -------------------------------------------------------------- 6 to 8


@pytest.fixture(scope="module")
def comparison(tmp_path_factory):
    reuse = os.environ.get("TACORL_ACCEPT_RUN")
    if reuse and Path(reuse, "comparison.json").exists():
        return Path(reuse), json.loads(Path(reuse, "comparison.json").read_text())
    run_dir = tmp_path_factory.mktemp("comparison")
    return run_dir, run_comparison(None, str(run_dir))


@pytest.mark.slow
def test_criterion_6_method_ordering(comparison):
    _, res = comparison
    taco, lmp, cql = (res[f"{m}/chain5"]["avg_len_mean"] for m in ("taco", "lmp", "cql-her"))
    t2 = res["taco/single-goal-2task"]["sr_2"]
    l2 = res["lmp/single-goal-2task"]["sr_2"]
    seconds = sum(res["timings"].values())
    order_ok = taco > lmp and taco > cql
    ratio_ok = t2 >= TWO_TASK_RATIO * l2 and t2 > 0.0
    verdict(6, order_ok and ratio_ok and seconds <= BUDGET_SECONDS,
            f"avg len TACO {taco:.3f} vs LMP {lmp:.3f} vs CQL+HER {cql:.3f}; "
            f"two-task success TACO {t2:.3f} vs LMP {l2:.3f} (need >= {TWO_TASK_RATIO}x, > 0); "
            f"total {seconds / 60:.1f} min (<= {BUDGET_SECONDS / 60:.0f})")


@pytest.mark.slow
def test_criterion_7_negative_goal_ablation(comparison):
    _, res = comparison
    full = res["taco/hard"]["sr_1"]
    noneg = res["taco-noneg/hard"]["sr_1"]
    verdict(7, noneg < full, f"hard-goal success full {full:.3f} vs no negatives {noneg:.3f}")


def _seed_rows(path: Path, seed: int) -> list[str]:
    lines = path.read_text().splitlines()
    return [l for l in lines[1:] if l.split(",")[1] == str(seed)]


@pytest.mark.slow
def test_criterion_8_determinism(comparison, tmp_path):
    run_dir, _ = comparison
    rerun = tmp_path / "rerun"
    run_comparison(None, str(rerun), seeds="0", ablation=False)
    compared, differ = 0, []
    for rel in sorted(p.relative_to(rerun / "seed_0") for p in (rerun / "seed_0").rglob("*.csv")):
        compared += 1
        if (rerun / "seed_0" / rel).read_bytes() != (run_dir / "seed_0" / rel).read_bytes():
            differ.append(str(rel))
    for rep in sorted((rerun / "eval").glob("*/report.csv")):
        compared += 1
        name = rep.parent.name
        if _seed_rows(rep, 0) != _seed_rows(run_dir / "eval" / name / "report.csv", 0):
            differ.append(f"eval/{name}")
    verdict(8, compared >= 10 and not differ,
            f"re-ran seed 0 end to end: {compared - len(differ)}/{compared} CSVs bitwise equal"
            + (f"; differ: {', '.join(differ)}" if differ else ""))
