"""Command-line entry point: ``callhawkes {simulate,fit,assess,summarize,compare}``.

Flags shared between commands can also be set through environment variables
named ``CALLHAWKES_<FLAG>`` (for example ``CALLHAWKES_SEED=7`` or
``CALLHAWKES_GRID_MIN=10``). An explicit flag wins over the environment.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .core import (
    ALL_VARIANTS,
    CovariateSeries,
    ModelVariant,
    NumericalError,
    RecorderArray,
    TimeGrid,
    ValidationError,
)
from .diagnostics import call_decomposition, derived_quantities, dic, msd, posterior_rtct, summarize_chain
from .inference import MCMCConfig, run_mcmc
from .intensity import HawkesModel
from .simulate import ccb_array, simulate_dataset

log = logging.getLogger("callhawkes")

ENV_PREFIX = "CALLHAWKES_"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2, 3
MSD_ADEQUATE = 0.05
DIC_TIE = 5.0


class ConfigError(Exception):
    """Bad or inconsistent command-line / config-file settings."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# flag dest -> type; each may come from CALLHAWKES_<DEST>
_ENV_FLAGS = {"variant": str, "seed": int, "iters": int, "burnin": int, "thin": int, "grid_min": float,
              "out": str, "horizon": float}


def _resolve_env(args: argparse.Namespace) -> argparse.Namespace:
    for dest, cast in _ENV_FLAGS.items():
        if getattr(args, dest, "missing") is None:
            raw = os.environ.get(ENV_PREFIX + dest.upper())
            if raw is not None:
                try:
                    setattr(args, dest, cast(raw))
                except ValueError:
                    raise ConfigError(f"{ENV_PREFIX}{dest.upper()}={raw!r} is not a valid {cast.__name__}") from None
    return args


def _variant(text) -> ModelVariant:
    try:
        return ModelVariant(text)
    except ValueError:
        raise ConfigError(f"unknown variant {text!r}; choose from {[v.value for v in ALL_VARIANTS]}") from None


def _pick(flag, cfg: dict, key: str, cast, default):
    if flag is not None:
        return flag
    if key in cfg:
        try:
            return cast(cfg[key])
        except ValueError:
            raise ConfigError(f"config key {key} = {cfg[key]!r} is not a valid {cast.__name__}") from None
    return default


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _out_dir(path) -> Path:
    if path is None:
        raise ConfigError("--out is required")
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------
def cmd_simulate(args) -> int:
    try:
        cfg = io.read_config(args.config) if args.config else {}
    except io.ParseError as e:
        raise ConfigError(str(e)) from None
    variant = _variant(_pick(args.variant, cfg, "variant", str, "nhpp-gp-cc"))
    seed = _pick(args.seed, cfg, "seed", int, 0)
    horizon = _pick(args.horizon, cfg, "horizon_min", float, 7200.0)
    grid_min = _pick(args.grid_min, cfg, "grid_min", float, 20.0)
    target = _pick(args.target_count, cfg, "target_count", float, 2750.0)
    allow = args.allow_supercritical or _pick(None, cfg, "allow_supercritical", _bool, False)
    array = io.read_geometry(args.geometry) if args.geometry else ccb_array()
    kw = {}
    if "alpha" in cfg:
        alpha = _pick(None, cfg, "alpha", _floats, None)
        if len(alpha) == 1:
            alpha = alpha * array.K
        if len(alpha) != array.K:
            raise ConfigError(f"alpha needs 1 or {array.K} values")
        kw["alpha"] = alpha
    for key in ("eta", "phi", "delta"):
        if key in cfg:
            kw[key] = _pick(None, cfg, key, float, None)
    params, cov, grid, data, z = simulate_dataset(variant, array, horizon, seed, target_count=target,
                                                  grid_spacing=grid_min, allow_supercritical=allow, **kw)
    out = _out_dir(args.out)
    io.write_events(out / "events.csv", data, array.ids)
    io.write_branching(out / "branching.csv", z)
    io.write_noise(out / "noise.csv", cov, array.ids)
    io.write_geometry(out / "geometry.csv", array)
    io.write_json(out / "truth.json", {
        "variant": variant.value, "seed": seed, "horizon_min": horizon, "grid_min": grid_min,
        "t0_clock_min": cov.t0_clock_min, "target_count": target, "n_events": data.n,
        "recorder_ids": list(array.ids), "params": io.params_to_dict(params),
    })
    print(f"simulated {data.n} events ({int(np.sum(z > 0))} counter-calls) from {variant.label} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------
def _load_inputs(events: str, geometry: Optional[str], noise: Optional[str], horizon: Optional[float],
                 grid_min: float, t0_clock_min: Optional[float]):
    table = io.read_events(events)
    if geometry:
        array = io.read_geometry(geometry)
    else:
        labels = sorted(set(table.labels))
        if len(labels) != 1:
            raise ConfigError("events name several recorders; --geometry is required")
        array = RecorderArray.single(labels[0])
    if t0_clock_min is None:
        t0_clock_min = table.t0_clock_min if table.t0_clock_min is not None else 0.0
    if horizon is None:
        if not table.times.size:
            raise ConfigError("--horizon is required for an empty event file")
        horizon = grid_min * math.ceil(float(table.times.max()) / grid_min)
    data = io.events_to_sequence(table, array, horizon, path=events)
    if noise:
        cov = io.read_noise(noise, array, t0_clock_min=t0_clock_min, origin=table.origin)
    else:
        cov = CovariateSeries.zeros(array.K, t0_clock_min)
    grid = TimeGrid.from_spacing(horizon, grid_min)
    return array, data, cov, grid


def cmd_fit(args) -> int:
    variant = _variant(args.variant or "nhpp-gp-cc")
    grid_min = args.grid_min if args.grid_min is not None else 20.0
    array, data, cov, grid = _load_inputs(args.events, args.geometry, args.noise, args.horizon, grid_min,
                                          args.t0_clock_min)
    base = MCMCConfig.desk() if args.desk else MCMCConfig()
    try:
        config = MCMCConfig(iterations=args.iters if args.iters is not None else base.iterations,
                            burn_in=args.burnin if args.burnin is not None else base.burn_in,
                            thin=args.thin if args.thin is not None else base.thin)
    except ValidationError as e:
        raise ConfigError(str(e)) from None
    seed = args.seed if args.seed is not None else 0
    model = HawkesModel(data, array, cov, grid)
    t0 = time.perf_counter()
    chain = run_mcmc(model, variant, config, seed=seed, progress=args.progress)
    seconds = time.perf_counter() - t0
    out = _out_dir(args.out)
    io.write_chain(out / "chain.csv", chain)
    inputs = {"events": args.events, "geometry": args.geometry, "noise": args.noise}
    io.write_json(out / "manifest.json", {
        "variant": variant.value, "seed": seed, "K": array.K, "recorder_ids": list(array.ids),
        "horizon_min": grid.horizon, "grid_min": grid_min, "grid_size": grid.size,
        "t0_clock_min": cov.t0_clock_min, "n_events": data.n,
        "mcmc": {"iterations": config.iterations, "burn_in": config.burn_in, "thin": config.thin},
        "n_draws": chain.n_draws, "acceptance": chain.acceptance, "seconds": round(seconds, 3),
        "sampler": chain.config,
        "inputs": {k: (os.path.abspath(v) if v else None) for k, v in inputs.items()},
        "input_sha256": io.input_hashes(inputs),
        "chain_sha256": io.sha256_file(out / "chain.csv"),
    })
    print(f"fitted {variant.label}: {chain.n_draws} draws in {seconds:.1f} s -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# loading a fitted run
# ---------------------------------------------------------------------------
def load_run(run_dir, events: Optional[str] = None):
    """Rebuild (manifest, model, chain) of a fit, refusing inputs whose hashes changed."""
    run = Path(run_dir)
    mpath = run / "manifest.json"
    if not mpath.exists():
        raise ConfigError(f"{run}: no manifest.json")
    man = io.read_json(mpath)
    inputs = dict(man["inputs"])
    if events is not None:
        if io.sha256_file(events) != man["input_sha256"].get("events"):
            raise ValidationError(f"{events} does not match the events this chain was fitted to")
        inputs["events"] = events
    for key, path in inputs.items():
        if path is None:
            continue
        if not os.path.exists(path):
            raise ValidationError(f"input {key} {path} no longer exists")
        if io.sha256_file(path) != man["input_sha256"].get(key):
            raise ValidationError(f"input {key} {path} changed since the fit")
    if io.sha256_file(run / "chain.csv") != man["chain_sha256"]:
        raise ValidationError(f"{run / 'chain.csv'} changed since the fit")
    array, data, cov, grid = _load_inputs(inputs["events"], inputs["geometry"], inputs["noise"],
                                          man["horizon_min"], man["grid_min"], man["t0_clock_min"])
    model = HawkesModel(data, array, cov, grid)
    chain = io.read_chain(run / "chain.csv", man["variant"], man["K"], man["grid_size"], seed=man["seed"])
    return man, model, chain


# ---------------------------------------------------------------------------
# assess / summarize / compare
# ---------------------------------------------------------------------------
def cmd_assess(args) -> int:
    man, model, chain = load_run(args.run, args.events)
    rt = posterior_rtct(model, chain, stride=args.stride)
    run = Path(args.run)
    q = rt.theoretical
    io.write_csv(run / "qq.csv", ["order", "theoretical", "mean", "lo", "hi"],
                  ((str(i + 1), io.fmt(q[i]), io.fmt(rt.mean[i]), io.fmt(rt.lo[i]), io.fmt(rt.hi[i]))
                   for i in range(q.size)))
    value = msd(rt.mean)
    d = dic(model, chain)
    io.write_json(run / "dic.json", {**d.as_dict(), "variant": man["variant"]})
    io.write_json(run / "assess.json", {"msd": value, "threshold": args.threshold,
                                        "adequate": bool(value <= args.threshold), "draws_used": rt.n_draws})
    verdict = "adequate" if value <= args.threshold else "inadequate"
    print(f"MSD {value:.4g} ({verdict} at threshold {args.threshold:g}); DIC {d.dic:.2f} (p_D {d.p_d:.2f})")
    return EXIT_OK


def cmd_summarize(args) -> int:
    man, model, chain = load_run(args.run, args.events)
    run = Path(args.run)
    summary = {"parameters": summarize_chain(chain, args.level)}
    if chain.variant.has_cc:
        dists = args.distances
        if dists is None and model.K > 1:
            dists = [model.array.min_distance, model.array.max_distance]
        derived = derived_quantities(chain, dists, args.level)
        derived["median_response_min"].pop("draws")
        for entry in derived.get("distance_survival", {}).values():
            entry.pop("draws")
        summary["derived"] = derived
    dec = call_decomposition(model, chain, stride=args.stride).summary(args.level)
    ids = man["recorder_ids"]
    rows = []
    for name in ("contact", "counter", "total"):
        for k, rid in enumerate(ids):
            rows.append((name, "", rid) + tuple(io.fmt(dec[name][s][k]) for s in ("mean", "lo", "hi")))
    for l, src in enumerate(ids):
        for k, rid in enumerate(ids):
            rows.append(("cross", src, rid) + tuple(io.fmt(dec["cross"][s][l, k]) for s in ("mean", "lo", "hi")))
    rows.append(("grand_total", "", "all") + tuple(io.fmt(dec["grand_total"][s]) for s in ("mean", "lo", "hi")))
    io.write_csv(run / "decomposition.csv", ["quantity", "source", "recorder", "mean", "hpd_lo", "hpd_hi"], rows)
    summary["expected_total"] = {s: float(dec["grand_total"][s]) for s in ("mean", "lo", "hi")}
    summary["observed_total"] = model.n
    io.write_json(run / "summaries.json", summary)
    tot = summary["expected_total"]
    print(f"expected total {tot['mean']:.1f} [{tot['lo']:.1f}, {tot['hi']:.1f}] vs observed {model.n}")
    return EXIT_OK


def dic_table(cells: dict, tie: float = DIC_TIE) -> str:
    """Text table with data sets as rows and fitted variants as columns.

    ``cells`` maps ``(row_label, variant)`` to a DIC value. Entries within
    ``tie`` of the row minimum are starred.
    """
    rows = list(dict.fromkeys(r for r, _ in cells))
    cols = [v for v in ALL_VARIANTS if any(c == v for _, c in cells)]
    width = max(12, *(len(v.label) + 2 for v in cols))
    rw = max(8, *(len(r) + 2 for r in rows))
    lines = ["data".ljust(rw) + "".join(v.label.rjust(width) for v in cols)]
    for r in rows:
        vals = {c: cells[(r, c)] for c in cols if (r, c) in cells}
        best = min(vals.values())
        out = r.ljust(rw)
        for c in cols:
            if c in vals:
                mark = "*" if vals[c] <= best + tie else " "
                out += f"{vals[c]:.1f}{mark}".rjust(width)
            else:
                out += "-".rjust(width)
        lines.append(out)
    return "\n".join(lines)


def _data_label(man: dict) -> str:
    events = man["inputs"]["events"]
    truth = Path(events).parent / "truth.json"
    if truth.exists():
        v = io.read_json(truth).get("variant")
        if v:
            return ModelVariant(v).label
    return Path(events).parent.name or events


def cmd_compare(args) -> int:
    cells = {}
    for run in args.runs:
        dpath = Path(run) / "dic.json"
        man = io.read_json(Path(run) / "manifest.json")
        if dpath.exists():
            value = io.read_json(dpath)["dic"]
        else:
            _, model, chain = load_run(run)
            value = dic(model, chain).dic
        cells[(_data_label(man), ModelVariant(man["variant"]))] = value
    table = dic_table(cells)
    print(table)
    if args.csv:
        cols = [v for v in ALL_VARIANTS if any(c == v for _, c in cells)]
        rows = list(dict.fromkeys(r for r, _ in cells))
        io.write_csv(args.csv, ["data"] + [v.value for v in cols],
                      ([r] + [io.fmt(cells[(r, c)]) if (r, c) in cells else "" for c in cols] for r in rows))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="callhawkes", description="Spatiotemporal Hawkes models for call sequences on a recorder array.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a data set from one model variant")
    s.add_argument("--config", help="flat key = value file")
    s.add_argument("--variant")
    s.add_argument("--seed", type=int)
    s.add_argument("--horizon", type=float, help="minutes (default 7200)")
    s.add_argument("--grid-min", type=float)
    s.add_argument("--target-count", type=float)
    s.add_argument("--geometry", help="geometry file (default: built-in 10-recorder array)")
    s.add_argument("--allow-supercritical", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the MCMC sampler")
    f.add_argument("--events", required=True)
    f.add_argument("--geometry")
    f.add_argument("--noise")
    f.add_argument("--variant")
    f.add_argument("--seed", type=int)
    f.add_argument("--iters", type=int)
    f.add_argument("--burnin", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--grid-min", type=float)
    f.add_argument("--horizon", type=float)
    f.add_argument("--t0-clock-min", type=float)
    f.add_argument("--desk", action="store_true", help="20000 iterations, 4000 burn-in")
    f.add_argument("--progress", action="store_true")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    a = sub.add_parser("assess", help="RTCT Q-Q table, MSD and DIC for a fitted run")
    a.add_argument("run")
    a.add_argument("--events", help="events file; must match the one the chain was fitted to")
    a.add_argument("--stride", type=int, default=1, help="use every stride-th draw")
    a.add_argument("--threshold", type=float, default=MSD_ADEQUATE)
    a.set_defaults(func=cmd_assess)

    m = sub.add_parser("summarize", help="posterior summaries and expected-call decomposition")
    m.add_argument("run")
    m.add_argument("--events")
    m.add_argument("--stride", type=int, default=1)
    m.add_argument("--level", type=float, default=0.95)
    m.add_argument("--distances", type=_floats, help="comma-separated km for survival probabilities")
    m.set_defaults(func=cmd_summarize)

    c = sub.add_parser("compare", help="DIC table over fitted runs")
    c.add_argument("runs", nargs="+")
    c.add_argument("--csv")
    c.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help exits 0; usage errors carry EXIT_CONFIG from _Parser
        return e.code if isinstance(e.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _resolve_env(args)
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except io.ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
