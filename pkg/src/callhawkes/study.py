"""Generate/fit simulation matrix: one data set per variant, every variant fitted to each.

Cell results are cached as JSON under a directory keyed by a hash of the
study configuration, so repeated runs only redo missing cells.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ALL_VARIANTS, ModelVariant
from .diagnostics import call_decomposition, dic, hpd, msd, posterior_rtct
from .inference import MCMCConfig, run_mcmc
from .intensity import HawkesModel
from .io import params_to_dict, write_json
from .simulate import ccb_array, simulate_dataset

log = logging.getLogger(__name__)

# bump when sampler changes make cached cell results stale
STUDY_REVISION = 2


@dataclass(frozen=True)
class StudyConfig:
    horizon: float = 7200.0
    target_count: float = 2750.0
    grid_min: float = 20.0
    iterations: int = 20_000
    burn_in: int = 4_000
    thin: int = 1
    seed: int = 20240
    rtct_stride: int = 10
    level: float = 0.95

    def key(self) -> str:
        blob = json.dumps({**asdict(self), "revision": STUDY_REVISION}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def mcmc(self) -> MCMCConfig:
        return MCMCConfig(iterations=self.iterations, burn_in=self.burn_in, thin=self.thin)


def data_seed(cfg: StudyConfig, variant: ModelVariant) -> int:
    return cfg.seed + 1000 * ALL_VARIANTS.index(variant)


def fit_seed(cfg: StudyConfig, data_variant: ModelVariant, fit_variant: ModelVariant) -> int:
    return data_seed(cfg, data_variant) + 10 * ALL_VARIANTS.index(fit_variant) + 1


def simulate_cell(cfg: StudyConfig, variant: ModelVariant):
    return simulate_dataset(variant, ccb_array(), cfg.horizon, data_seed(cfg, variant),
                            target_count=cfg.target_count, grid_spacing=cfg.grid_min)


def fit_cell(cfg: StudyConfig, data_variant, fit_variant, dataset=None) -> dict:
    """Fit one cell and reduce the chain to the numbers the study reports."""
    data_variant, fit_variant = ModelVariant(data_variant), ModelVariant(fit_variant)
    params, cov, grid, data, z = dataset if dataset is not None else simulate_cell(cfg, data_variant)
    model = HawkesModel(data, ccb_array(), cov, grid)
    t0 = time.perf_counter()
    chain = run_mcmc(model, fit_variant, cfg.mcmc, seed=fit_seed(cfg, data_variant, fit_variant))
    seconds = time.perf_counter() - t0
    d = dic(model, chain)
    rt = posterior_rtct(model, chain, stride=cfg.rtct_stride)
    dec = call_decomposition(model, chain, stride=cfg.rtct_stride)
    additivity = float(np.max(np.abs(dec.contact + dec.counter - dec.total)))
    out = {
        "data": data_variant.value, "fit": fit_variant.value, "n_events": data.n,
        "n_counter_true": int(np.sum(z > 0)), "seconds": seconds, **d.as_dict(), "msd": msd(rt.mean),
        "acceptance": chain.acceptance, "expected_total_mean": float(dec.grand_total.mean()),
        "expected_total_hpd": hpd(dec.grand_total, cfg.level), "additivity_error": additivity,
        "truth": params_to_dict(params),
    }
    if fit_variant.has_cc:
        s = chain.samples
        out["hpd"] = {"eta": hpd(s["eta"], cfg.level), "phi": hpd(s["phi"], cfg.level),
                      "alpha": [hpd(s["alpha"][:, k], cfg.level) for k in range(model.K)]}
        out["posterior_mean"] = {"eta": float(s["eta"].mean()), "phi": float(s["phi"].mean()),
                                 "alpha": s["alpha"].mean(axis=0).tolist()}
    return out


def run_matrix(cfg: StudyConfig = StudyConfig(), cache_dir: Optional[str] = None,
               data_variants=ALL_VARIANTS, fit_variants=ALL_VARIANTS, workers: int = 1) -> dict:
    """All requested cells, keyed ``(data, fit)``; cached cells are read back instead of refitted.

    With ``workers > 1`` missing cells are fitted in separate processes. Each
    cell seeds its own generator, so results do not depend on ``workers``.
    """
    cache = None
    if cache_dir is not None:
        cache = Path(cache_dir) / f"study-{cfg.key()}"
        cache.mkdir(parents=True, exist_ok=True)
        write_json(cache / "config.json", {**asdict(cfg), "revision": STUDY_REVISION})
    results, todo = {}, []
    for dv in map(ModelVariant, data_variants):
        for fv in map(ModelVariant, fit_variants):
            path = cache / f"{dv.value}__{fv.value}.json" if cache is not None else None
            if path is not None and path.exists():
                with open(path) as fh:
                    results[(dv, fv)] = json.load(fh)
            else:
                todo.append((dv, fv, path))

    def done(dv, fv, path, res):
        if path is not None:
            write_json(path, res)
        results[(dv, fv)] = res

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(fit_cell, cfg, dv, fv): (dv, fv, path) for dv, fv, path in todo}
            for fut in as_completed(futures):
                done(*futures[fut], fut.result())
    else:
        datasets = {}
        for dv, fv, path in todo:
            if dv not in datasets:
                datasets = {dv: simulate_cell(cfg, dv)}
            log.info("fitting %s to data from %s", fv.label, dv.label)
            done(dv, fv, path, fit_cell(cfg, dv, fv, datasets[dv]))
    return {(dv, fv): results[(dv, fv)] for dv in map(ModelVariant, data_variants)
            for fv in map(ModelVariant, fit_variants)}


def dic_selection(results: dict, tie: float = 5.0) -> dict:
    """Per data variant, the fitters within ``tie`` of the row minimum (joint minima).

    ``ok`` holds when some joint minimum is the generating variant or a
    supermodel of it; ``ok_all`` when every joint minimum is.
    """
    out = {}
    for dv in dict.fromkeys(d for d, _ in results):
        row = {fv: r["dic"] for (d, fv), r in results.items() if d == dv}
        best = min(row.values())
        winners = [fv for fv, v in row.items() if v <= best + tie]
        out[dv] = {"winners": winners, "ok": any(fv.contains(dv) for fv in winners),
                   "ok_all": all(fv.contains(dv) for fv in winners)}
    return out
