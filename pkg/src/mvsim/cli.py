"""mvsim command line: ``mvsim <command> [--config FILE] [flags]`` or ``mvsim run --config FILE``.

Flags override the config file.  Every run writes its outputs plus a
``manifest.json`` into ``out_dir``; feeding the manifest back through
``mvsim run --config manifest.json`` reproduces the outputs byte for byte.
Exit codes: 0 ok, 2 config error, 3 compute error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .combinatorics import count_table, write_count_csv
from .config import COMMANDS, ConfigError, RunConfig, load_config, strip_defaults, validate_config
from .engine import SimGrid, simulate, write_terminal_csv, write_trajectory_csv
from .estimators import (
    build_histogram,
    collect_study,
    moment_estimate,
    write_fit_json,
    write_histogram_csv,
    write_rates_csv,
)
from .model import model_from_config, observable_get
from .rng import ALGORITHM_ID, NoisePlan
from .variations import (
    particle_sde,
    sum_sin_observable,
    value_gradient,
    variation_moment_check,
    moments_stable,
)


class ComputeError(RuntimeError):
    pass


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _json_dump(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- command bodies ---------------------------------------------------------------------
# each takes (cfg, out_dir, threads, log) and returns (summary dict, list of written files)


def _setup(cfg: RunConfig):
    try:
        model = model_from_config(cfg.model)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), "/model") from None
    return model, SimGrid(cfg.t_end, cfg.n_steps), NoisePlan(cfg.seed)


def cmd_simulate(cfg, out, threads, log):
    model, grid, noise = _setup(cfg)
    files = []
    summary = []
    for r in range(cfg.replicates):
        state = simulate(model, cfg.d, grid, noise, r, cfg.backend, cfg.record)
        tag = "" if cfg.replicates == 1 else f"_r{r}"
        path = out / f"terminal{tag}.csv"
        write_terminal_csv(path, state)
        files.append(path.name)
        if cfg.record:
            tpath = out / f"trajectory{tag}.csv"
            write_trajectory_csv(tpath, state, grid)
            files.append(tpath.name)
        summary.append({"replicate": r, "mean": float(np.mean(state.x)), "max_abs": float(np.max(np.abs(state.x)))})
    return {"replicates": summary}, files


def cmd_histogram(cfg, out, threads, log):
    model, grid, noise = _setup(cfg)
    xs = np.concatenate([simulate(model, cfg.d, grid, noise, r, cfg.backend).x for r in range(cfg.replicates)])
    hist = build_histogram(xs, cfg.bins, tuple(cfg.range) if cfg.range else None)
    write_histogram_csv(out / "histogram.csv", hist)
    summary = {
        "n_samples": hist.n_samples,
        "n_outside": hist.n_outside,
        "mode_center": hist.mode_center(),
        "n_modes": hist.n_modes(),
        "mean": float(np.mean(xs)),
        "sd": float(np.std(xs)),
    }
    return summary, ["histogram.csv"]


def cmd_rates(cfg, out, threads, log):
    model, grid, noise = _setup(cfg)
    g = observable_get(cfg.observable) if cfg.observable else None
    study = collect_study(
        model, g, cfg.d_list, grid, noise, cfg.replicates,
        weak_replicates=cfg.weak_replicates, weak_rel_ci=cfg.weak_rel_ci, weak_max=cfg.weak_max,
        threads=threads, backend=cfg.backend, norm=cfg.strong_norm, progress=log,
    )
    write_rates_csv(out / "rates.csv", study)
    files = ["rates.csv"]
    summary = {"n_replicates": study.n_replicates}
    fits = []
    if cfg.command in ("strong-rate", "rate-study"):
        fits.append(("strong", study.strong_rate))
    if cfg.command in ("weak-rate", "rate-study"):
        fits.append(("weak", study.weak_rate))
    for kind, fit in fits:
        est = fit()
        name = "fit.json" if len(fits) == 1 else f"fit_{kind}.json"
        write_fit_json(out / name, est.fit_dict(cfg.seed))
        files.append(name)
        summary[f"{kind}_slope"] = est.slope
    return summary, files


def cmd_moments(cfg, out, threads, log):
    model, grid, noise = _setup(cfg)
    ds = cfg.d_list if cfg.d_list else [cfg.d]
    rows = []
    with open(out / "moments.csv", "w") as fh:
        fh.write("d,p,moment,ci\n")
        for d in ds:
            for p in _as_list(cfg.p):
                m, ci = moment_estimate(model, d, None if cfg.at_start else grid, noise, cfg.replicates, p,
                                        threads, cfg.backend)
                fh.write(f"{d},{p},{m!r},{ci!r}\n")
                rows.append({"d": d, "p": p, "moment": m, "ci": ci})
    vals = [r["moment"] for r in rows]
    return {"rows": rows, "max_ratio": max(vals) / min(vals) if min(vals) > 0 else None}, ["moments.csv"]


def cmd_variations(cfg, out, threads, log):
    model, grid, noise = _setup(cfg)
    ds = cfg.d_list if cfg.d_list else [cfg.d]
    reports = []
    gradients = []
    g = sum_sin_observable()
    for d in ds:
        sde = particle_sde(model, d)
        x0 = model.initial.from_uniform(noise.uniforms(0, d))
        for p in _as_list(cfg.p):
            reports.append(variation_moment_check(sde, x0, grid, noise, cfg.replicates, p, threads))
        est = value_gradient(sde, g, x0, grid, noise, cfg.replicates, threads)
        gradients.append({"d": d, "observable": g.name, "x0": x0.tolist(),
                          "estimates": {"gradient": est.gradient.tolist()},
                          "ci": {"gradient": est.ci.tolist()}, "replicates": est.replicates, "seed": cfg.seed})
    stable = {str(p): moments_stable([r for r in reports if r["p"] == p]) for p in _as_list(cfg.p)}
    _json_dump(out / "variations.json", {"reports": reports, "stable_factor3": stable})
    _json_dump(out / "value_gradient.json", gradients)
    return {"stable_factor3": stable}, ["variations.json", "value_gradient.json"]


def cmd_count(cfg, out, threads, log):
    rows = count_table(_as_list(cfg.n), _as_list(cfg.p))
    write_count_csv(out / "counts.csv", rows)
    return {"rows": len(rows)}, ["counts.csv"]


HANDLERS = {
    "simulate": cmd_simulate,
    "histogram": cmd_histogram,
    "strong-rate": cmd_rates,
    "weak-rate": cmd_rates,
    "rate-study": cmd_rates,
    "moments": cmd_moments,
    "variations-check": cmd_variations,
    "count-multiindex": cmd_count,
}


def run(cfg: RunConfig, threads: int = 1, log=None) -> dict:
    """Execute a validated config; returns the manifest (also written to out_dir)."""
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOError(f"cannot create {out}: {exc}") from exc
    started = time.time()
    summary, files = HANDLERS[cfg.command](cfg, out, threads, log or (lambda s: None))
    manifest = {
        "config": strip_defaults(cfg),
        "rng_algorithm": ALGORITHM_ID,
        "tool_version": __version__,
        "wall_clock_s": time.time() - started,
        "threads": threads,
        "outputs": files,
        "result": summary,
    }
    _json_dump(out / "manifest.json", manifest)
    return manifest


# --- argument handling ----------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(" ", "").split(",") if v]


def _float_pair(text: str) -> list[float]:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("expected lo,hi")
    return vals


# flag -> (config key, type)
FLAGS = {
    "--model": ("model", str),
    "--d": ("d", int),
    "--d-list": ("d_list", _int_list),
    "--n-steps": ("n_steps", int),
    "--t-end": ("t_end", float),
    "--seed": ("seed", int),
    "--replicates": ("replicates", int),
    "--observable": ("observable", str),
    "--out-dir": ("out_dir", str),
    "--backend": ("backend", str),
    "--bins": ("bins", int),
    "--range": ("range", _float_pair),
    "--p": ("p", _int_list),
    "--n": ("n", _int_list),
    "--strong-norm": ("strong_norm", str),
    "--weak-replicates": ("weak_replicates", int),
    "--weak-rel-ci": ("weak_rel_ci", float),
    "--weak-max": ("weak_max", int),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (or a manifest.json from an earlier run)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $MVSIM_THREADS or 1); never changes results")
    common.add_argument("--quiet", action="store_true")
    for flag, (key, typ) in FLAGS.items():
        common.add_argument(flag, dest=key, type=typ, default=None)
    common.add_argument("--record", dest="record", action="store_const", const=True, default=None,
                        help="simulate: also dump the full trajectory")
    common.add_argument("--at-start", dest="at_start", action="store_const", const=True, default=None,
                        help="moments: evaluate at t = 0")

    parser = argparse.ArgumentParser(prog="mvsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mvsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the command named in --config")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _threads(arg) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("MVSIM_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ConfigError(f"MVSIM_THREADS must be an integer, got {env!r}") from None


def config_from_args(args) -> RunConfig:
    raw: dict = {}
    if args.config:
        cfg = load_config(args.config)
        raw = strip_defaults(cfg)
    if args.command != "run":
        if raw.get("command") not in (None, args.command):
            # a different command from the file: keep only the shared settings
            raw = {k: raw[k] for k in ("model", "n_steps", "t_end", "seed", "observable", "out_dir", "backend")
                   if k in raw}
        raw["command"] = args.command
    elif "command" not in raw:
        raise ConfigError("`run` needs --config with a command", "/command")
    for key, _ in list(FLAGS.values()) + [("record", None), ("at_start", None)]:
        v = getattr(args, key)
        if v is not None:
            raw[key] = v
    return validate_config(raw)


def _fail(kind: str, exc: Exception, code: int, path: str = "") -> int:
    obj = {"error": kind, "message": str(exc)}
    if path:
        obj["path"] = path
    print(json.dumps(obj), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = _threads(args.threads)
        cfg = config_from_args(args)
    except ConfigError as exc:
        return _fail("ConfigError", exc, 2, exc.path)
    except OSError as exc:
        return _fail("IoError", exc, 4)
    log = None if args.quiet else (lambda s: print(s, file=sys.stderr, flush=True))
    try:
        manifest = run(cfg, threads, log)
    except ConfigError as exc:
        return _fail("ConfigError", exc, 2, exc.path)
    except OSError as exc:
        return _fail("IoError", exc, 4)
    except Exception as exc:  # anything raised by the numerics
        return _fail("ComputeError", ComputeError(f"{type(exc).__name__}: {exc}"), 3)
    if not args.quiet:
        print(json.dumps(manifest["result"], indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
