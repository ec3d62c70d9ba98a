"""Fit the full model to its own simulated data and compare posteriors with the truth.

    python scripts/recovery.py --iters 20000 --burnin 4000 --seed 20240
"""

import argparse
import logging

import numpy as np

from callhawkes.core import ModelVariant
from callhawkes.diagnostics import call_decomposition, hpd
from callhawkes.inference import MCMCConfig, PriorConfig, run_mcmc
from callhawkes.intensity import HawkesModel
from callhawkes.simulate import ccb_array
from callhawkes.study import StudyConfig, data_seed, fit_seed, simulate_cell


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=20_000)
    ap.add_argument("--burnin", type=int, default=4_000)
    ap.add_argument("--seed", type=int, default=20240, help="study seed; data and chain seeds derive from it")
    ap.add_argument("--level", type=float, default=0.95)
    ap.add_argument("--alpha-shape", type=float, default=PriorConfig().alpha_shape,
                    help="gamma prior shape for alpha (scale stays at the default)")
    ap.add_argument("--no-refresh", action="store_true", help="drop the z-integrated alpha move")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    v = ModelVariant.NHPP_GP_CC
    cfg = StudyConfig(iterations=args.iters, burn_in=args.burnin, seed=args.seed)
    params, cov, grid, data, z = simulate_cell(cfg, v)
    arr = ccb_array()
    model = HawkesModel(data, arr, cov, grid)
    mcmc = MCMCConfig(iterations=args.iters, burn_in=args.burnin, alpha_refresh=not args.no_refresh)
    chain = run_mcmc(model, v, mcmc, PriorConfig(alpha_shape=args.alpha_shape), seed=fit_seed(cfg, v, v),
                     progress=True)
    s = chain.samples

    print(f"data seed {data_seed(cfg, v)}: {data.n} events, {int(np.sum(z > 0))} counter-calls")
    kids = np.bincount(data.marks[z[z > 0] - 1], minlength=arr.K)
    print(f"{'param':>10} {'truth':>8} {'mean':>8} {'hpd lo':>10} {'hpd hi':>10}  cover  near-zero  true kids")
    for name, truth, draws in [("eta", params.eta, s["eta"]), ("phi", params.phi, s["phi"])]:
        lo, hi = hpd(draws, args.level)
        print(f"{name:>10} {truth:8.4f} {draws.mean():8.4f} {lo:10.4g} {hi:10.4g}  {lo <= truth <= hi!s:5}")
    for k in range(arr.K):
        d = s["alpha"][:, k]
        lo, hi = hpd(d, args.level)
        a = params.alpha[k]
        print(f"{'alpha_' + str(k + 1):>10} {a:8.4f} {d.mean():8.4f} {lo:10.4g} {hi:10.4g}  {lo <= a <= hi!s:5}"
              f"  {np.mean(d < 1e-10):9.2f}  {kids[k]:9d}")
    dec = call_decomposition(model, chain, stride=10)
    lo, hi = hpd(dec.grand_total, args.level)
    print(f"expected total {dec.grand_total.mean():.1f} [{lo:.1f}, {hi:.1f}] vs realized {data.n}")
    print("acceptance:", {k: round(v_, 3) for k, v_ in chain.acceptance.items()})


if __name__ == "__main__":
    main()
