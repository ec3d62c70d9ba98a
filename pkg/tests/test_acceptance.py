"""Acceptance criteria 1-9, one test each; every test prints a CRITERION line.

The simulation matrix (criteria 1-4) takes a few minutes per cell. Cell results
are cached under ``.study_cache`` in the repository root, or the directory in
``CALLHAWKES_STUDY_CACHE`` (``none`` disables the cache).
"""

import os
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

import oracles
from callhawkes.cli import main
from callhawkes.core import ALL_VARIANTS, N_COEF, ModelParams, ModelVariant, RecorderArray, TimeGrid
from callhawkes.diagnostics import derived_quantities, rtct_transform
from callhawkes.inference import PosteriorChain, PriorConfig, sample_branching, branching_probabilities
from callhawkes.intensity import HawkesModel
from callhawkes.simulate import (
    branching_ratios,
    ccb_array,
    study_params,
    simulate_dataset,
    simulate_nhpp,
    simulate_offspring,
)
from callhawkes.study import StudyConfig, dic_selection, run_matrix
from conftest import ACCEPTANCE_LINES, make_model

ROOT = Path(__file__).resolve().parents[1]
GPCC = ModelVariant.NHPP_GP_CC


def report(n: int, ok: bool, detail: str):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def matrix():
    cache = os.environ.get("CALLHAWKES_STUDY_CACHE", str(ROOT / ".study_cache"))
    return run_matrix(StudyConfig(), cache_dir=None if cache.lower() == "none" else cache)


# ---------------------------------------------------------------------------
# 1-4: simulation matrix
# ---------------------------------------------------------------------------
def test_criterion_1_dic_selection(matrix):
    sel = dic_selection(matrix, tie=5.0)
    parts = [f"{dv.value}->{'+'.join(w.value for w in s['winners'])}" for dv, s in sel.items()]
    ok = len(sel) == 4 and all(s["ok"] for s in sel.values())
    report(1, ok, "DIC minima per row (within 5): " + "; ".join(parts))


def test_criterion_2_rtct_adequacy(matrix):
    own = {dv: matrix[(dv, dv)]["msd"] for dv in ALL_VARIANTS}
    nhpp_fit = {dv: matrix[(dv, ModelVariant.NHPP)]["msd"] for dv in ALL_VARIANTS}
    ratios = {dv: nhpp_fit[dv] / own[dv] for dv in ALL_VARIANTS[1:]}
    ok = all(v <= 0.05 for v in own.values()) and all(r >= 5.0 for r in ratios.values())
    detail = ("correct-model MSD " + ", ".join(f"{dv.value}={own[dv]:.4f}" for dv in ALL_VARIANTS)
              + "; NHPP/correct ratio " + ", ".join(f"{dv.value}={r:.1f}" for dv, r in ratios.items()))
    report(2, ok, detail)


def test_criterion_3_parameter_recovery(matrix):
    cell = matrix[(GPCC, GPCC)]
    truth, hpd = cell["truth"], cell["hpd"]
    cover = lambda v, iv: iv[0] <= v <= iv[1]
    eta_ok = cover(truth["eta"], hpd["eta"])
    phi_ok = cover(truth["phi"], hpd["phi"])
    hits = [cover(a, iv) for a, iv in zip(truth["alpha"], hpd["alpha"])]
    missed = [f"{k + 1}(true {truth['alpha'][k]:g}, hpd [{hpd['alpha'][k][0]:.3g}, {hpd['alpha'][k][1]:.3g}])"
              for k, h in enumerate(hits) if not h]
    detail = (f"eta {truth['eta']:g} in [{hpd['eta'][0]:.4f}, {hpd['eta'][1]:.4f}]: {eta_ok}; "
              f"phi {truth['phi']:g} in [{hpd['phi'][0]:.4f}, {hpd['phi'][1]:.4f}]: {phi_ok}; "
              f"alpha covered {sum(hits)}/10" + (f", missed {', '.join(missed)}" if missed else ""))
    report(3, eta_ok and phi_ok and sum(hits) >= 8, detail)


def test_criterion_4_compensator_totals(matrix):
    cell = matrix[(GPCC, GPCC)]
    rel = abs(cell["expected_total_mean"] - cell["n_events"]) / cell["n_events"]
    worst_add = max(r["additivity_error"] for r in matrix.values())
    worst_rel = max(abs(r["expected_total_mean"] - r["n_events"]) / r["n_events"]
                    for (dv, fv), r in matrix.items() if fv.contains(dv))
    ok = rel <= 0.05 and worst_add <= 1e-10
    report(4, ok, f"expected {cell['expected_total_mean']:.1f} vs realized {cell['n_events']} "
                  f"({100 * rel:.2f}%); worst over correct/super fits {100 * worst_rel:.2f}%; "
                  f"max additivity error {worst_add:.2e}")


# ---------------------------------------------------------------------------
# 5-8: formula checkpoints, oracles, priors, simulator
# ---------------------------------------------------------------------------
def _single_draw(eta, phi):
    p = ModelParams(beta=np.zeros((N_COEF, 2)), beta_tilde=np.zeros(N_COEF), tau=np.ones(N_COEF),
                    alpha=np.array([0.05, 0.05]), eta=eta, phi=phi)
    samples = {"beta": p.beta[None], "beta_tilde": p.beta_tilde[None], "tau": p.tau[None],
               "alpha": p.alpha[None], "eta": np.array([eta]), "phi": np.array([phi])}
    return PosteriorChain(ModelVariant.NHPP_CC, 2, 5, samples, np.zeros(1), np.zeros(1, dtype=np.int64))


def test_criterion_5_exact_checkpoints():
    single = derived_quantities(_single_draw(0.51, 0.32), [7.1])
    multi = derived_quantities(_single_draw(0.151, 0.32), [7.1])
    vals = (single["median_response_min"]["mean"], multi["median_response_min"]["mean"],
            multi["distance_survival"][7.1]["mean"])
    ok = abs(vals[0] - 1.36) <= 0.005 and abs(vals[1] - 4.59) <= 0.005 and abs(vals[2] - 0.10) <= 0.005
    report(5, ok, f"median response {vals[0]:.4f} and {vals[1]:.4f} min, survival at 7.1 km {vals[2]:.4f}")


def test_criterion_6_oracle_equivalence():
    tvs = {"alpha": max(oracles.alpha_tv(0), oracles.alpha_tv(1), oracles.alpha_tv(2)),
           "tau": oracles.tau_tv(), "beta_tilde": oracles.beta_tilde_tv()}
    enum = oracles.enumeration_rel_errors(n_instances=8).max()
    rng = np.random.default_rng(0)
    times = np.sort(rng.uniform(0.0, 50.0, 40))
    model = make_model(times, np.zeros(40, int), RecorderArray.single(), 50.0, spacing=5.0)
    beta = np.zeros((N_COEF, 1))
    beta[0, 0] = np.log(1.7)
    gaps = rtct_transform(model, ModelParams(beta=beta, beta_tilde=beta[:, 0], tau=np.ones(N_COEF)))
    hpp_err = float(np.max(np.abs(gaps - 1.7 * np.diff(times, prepend=0.0))))
    ok = max(tvs.values()) < 0.01 and enum <= 1e-9 and hpp_err <= 1e-12
    report(6, ok, "TV " + ", ".join(f"{k}={v:.2e}" for k, v in tvs.items())
                  + f"; enumeration rel err {enum:.1e}; HPP RTCT max err {hpp_err:.1e}")


def test_criterion_7_prior_preservation(gpcc_small):
    block = oracles.preserve_beta_block()
    hier = oracles.preserve_hierarchy()
    alpha = oracles.preserve_alpha()
    gp = oracles.preserve_gp()
    model = gpcc_small[-1]
    prior = PriorConfig()
    eta = oracles.preserve_decay(prior.eta_bounds(model))
    phi = oracles.preserve_decay(prior.phi_bounds(model), seed=8)
    refresh_p, dead, target_dead = oracles.refresh_alpha_spike(sweeps=50_000)
    _, dead0, target_dead0 = oracles.refresh_alpha_spike(shape=0.001, sweeps=50_000)
    # branching step: empirical label frequencies against the full conditional
    params, *_ = gpcc_small
    rng = np.random.default_rng(9)
    mu = model.mu_at_events(model.mu_nodes(params))
    i = int(np.argmax(model.excitation(params.alpha, params.eta, params.phi) / mu))
    probs = branching_probabilities(model, params, i)
    draws = np.array([sample_branching(model, params, mu, rng)[i] for _ in range(50_000)])
    keep = probs * 50_000 > 5
    obs = np.append(np.bincount(draws, minlength=i + 1)[keep], np.sum(~keep[draws]))
    exp_ = np.append(probs[keep], probs[~keep].sum()) * 50_000
    if exp_[-1] == 0:
        obs, exp_ = obs[:-1], exp_[:-1]
    z_p = stats.chisquare(obs, exp_).pvalue

    checks = {
        "beta/log-delta block": bool(np.all(block["z_mean"] < 4) and np.all(np.abs(block["var_ratio"] - 1) < 0.1)
                                     and block["corr_err"] < 0.05),
        "beta~/delta~ and tau/tau_delta": hier["beta_tilde_ks"] > 0.01 and hier["tau_ks"] > 0.01,
        "alpha gibbs": alpha["alpha_ks"] > 0.01 and np.allclose(alpha["default_shape"], prior.alpha_shape)
        and np.allclose(alpha["default_scale"], prior.alpha_scale),
        "gp ess": abs(gp["mean"]) < 0.05 and abs(gp["var"] - 1) < 0.05,
        "eta": eta["ks"] > 0.01 and eta["inside"],
        "phi": phi["ks"] > 0.01 and phi["inside"],
        "alpha refresh": refresh_p > 0.01 and abs(dead - target_dead) < 0.03 and abs(dead0 - target_dead0) < 0.03,
        "branching": z_p > 0.01,
    }
    detail = (f"block z<{block['z_mean'].max():.2f} var ratio {block['var_ratio'].min():.3f}-"
              f"{block['var_ratio'].max():.3f}; KS p beta~={hier['beta_tilde_ks']:.2f} tau={hier['tau_ks']:.2f} "
              f"alpha={alpha['alpha_ks']:.2f} eta={eta['ks']:.2f} phi={phi['ks']:.2f} refresh={refresh_p:.2f}; "
              f"gp mean {gp['mean']:.3f} var {gp['var']:.3f}; branching chi2 p={z_p:.2f}")
    failed = [k for k, v in checks.items() if not v]
    report(7, not failed, detail + (f"; failed: {', '.join(failed)}" if failed else ""))


def test_criterion_8_simulator_calibration(tri_array):
    rng = np.random.default_rng(21)
    lam, T = 0.4, 100.0
    counts = np.array([simulate_nhpp(lambda t: np.full_like(t, lam), lam, 0.0, T, rng).size for _ in range(1000)])
    z_count = abs(counts.mean() - lam * T) / np.sqrt(lam * T / 1000)

    arr = ccb_array()
    p = study_params(arr, TimeGrid.from_spacing(7200.0), "nhpp-cc", rng)
    ratios = branching_ratios(p, arr)
    n_par = 1000
    parents_m = np.repeat(np.arange(10), n_par)
    _, _, kids_p = simulate_offspring(np.full(parents_m.size, 1.0), parents_m, p, arr, 7200.0, rng)
    per_source = np.bincount(parents_m[kids_p], minlength=10) / n_par
    z_off = float(np.max(np.abs(per_source - ratios) / np.sqrt(ratios / n_par)))

    gaps = []
    for seed in range(5):
        params, cov, grid, data, _ = simulate_dataset("nhpp-gp-cc", tri_array, 2880.0, seed=300 + seed,
                                                      target_count=500, alpha=[0.1, 0.08, 0.05], eta=0.3, phi=0.7)
        gaps.append(rtct_transform(HawkesModel(data, tri_array, cov, grid), params))
    ks_p = stats.kstest(np.concatenate(gaps), "expon").pvalue
    ok = z_count < 3 and z_off < 3 and ks_p > 0.01
    report(8, ok, f"HPP count |z|={z_count:.2f}; offspring max |z|={z_off:.2f}; RTCT-under-truth KS p={ks_p:.3f}")


# ---------------------------------------------------------------------------
# 9: determinism through the command line
# ---------------------------------------------------------------------------
def test_criterion_9_determinism(tmp_path):
    runs = []
    for tag in ("a", "b"):
        sim, fit = tmp_path / f"sim_{tag}", tmp_path / f"fit_{tag}"
        assert main(["simulate", "--variant", "nhpp-gp-cc", "--seed", "17", "--horizon", "1440",
                     "--target-count", "500", "--out", str(sim)]) == 0
        assert main(["fit", "--events", str(sim / "events.csv"), "--geometry", str(sim / "geometry.csv"),
                     "--noise", str(sim / "noise.csv"), "--variant", "nhpp-gp-cc", "--seed", "5",
                     "--iters", "300", "--burnin", "100", "--horizon", "1440", "--out", str(fit)]) == 0
        runs.append(((sim / "events.csv").read_bytes(), (fit / "chain.csv").read_bytes()))
    same_events = runs[0][0] == runs[1][0]
    same_chain = runs[0][1] == runs[1][1]
    report(9, same_events and same_chain, f"events.csv identical: {same_events}; chain.csv identical: {same_chain}")
