"""Command-line driver.

    dlm sample      image -> BCS1 measurement file
    dlm learn       measurements + initial dictionary -> DIC1 dictionary + history CSV
    dlm recover     measurements + dictionaries -> PGM images + PSNR report
    dlm analyze     uniqueness / Chernoff / unbiasedness / accuracy / Hessian CSVs
    dlm experiment  universal-vs-adaptive PSNR table for a preset
    dlm plot-data   per-iteration PSNR curves, shared vs per-block sensing

Settings come from ``--config`` (flat ``key = value`` lines) and are
overridden by command-line flags. The resolved settings are written to
``config.txt`` in the output directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis, experiments
from .dictionary import init_overcomplete_dct, load_dictionary, save_dictionary
from .imaging import (ImageError, capped, extract_blocks, load_pgm, psnr, recover_image,
                      save_pgm, synthetic_image)
from .learn import LearnConfig, dlm_learn
from .measurement import (Scheme, load_measurements, measure_blocks, measure_image,
                          save_measurements)
from .reports import format_config, format_value, parse_config, write_csv


class CLIError(Exception):
    pass


# key -> (type, default); shared by config files and flags
SETTINGS = {
    "image": (str, "synthetic"),
    "block_edge": (int, 8),
    "ratio": (float, 0.5),
    "scheme": (str, None),
    "seed": (int, 0),
    "lambda0": (float, 0.05),
    "lambda_star": (float, 0.001),
    "T_star": (int, None),
    "T_max": (int, 20),
    "lam": (float, None),
    "dict": (str, "dct"),
    "p": (int, 64),
    "measurements": (str, None),
    "reference": (str, None),
    "out": (str, "out"),
    "n_jobs": (int, 1),
    "preset": (str, "set1"),
    "ratios": (str, ",".join(str(r) for r in experiments.DEFAULT_RATIOS)),
    "trials": (int, 1),
    "what": (str, "all"),
    "n": (int, 6),
    "atoms": (int, 8),
    "m": (int, 3),
    "N_values": (str, "64,128,256,512"),
    "draws": (int, 10_000),
}

SCHEME_CHOICES = ("big", "big-ortho", "fixed", "inpaint", "identity")


def _convert(key, raw):
    typ = SETTINGS[key][0]
    if raw is None or raw == "":
        return None
    try:
        return typ(raw)
    except ValueError:
        raise CLIError(f"setting {key}: cannot parse {raw!r} as {typ.__name__}") from None


def resolve(args) -> dict:
    cfg = {k: default for k, (_, default) in SETTINGS.items()}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CLIError(f"config file not found: {path}")
        for key, raw in parse_config(path.read_text()).items():
            if key not in SETTINGS:
                raise CLIError(f"unknown config key {key!r}")
            cfg[key] = _convert(key, raw)
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if not 0 < cfg["ratio"] <= 1:
        raise CLIError(f"ratio must be in (0, 1], got {cfg['ratio']}")
    if cfg["scheme"] is not None and cfg["scheme"] not in SCHEME_CHOICES:
        raise CLIError(f"unknown scheme {cfg['scheme']!r}")
    for key in ("image", "dict", "measurements", "reference"):
        if cfg[key] and not (key in ("image", "reference") and _builtin(cfg[key])) \
                and not (key == "dict" and cfg[key] == "dct"):
            cfg[key] = str(Path(cfg[key]).resolve())
            # fail before the output directory is touched
            _need_file(cfg[key], key)
    cfg["out"] = str(Path(cfg["out"]).resolve())
    return cfg


def _echo(cfg, command, keys) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    shown = {k: cfg[k] for k in keys}
    shown["command"] = command
    (out / "config.txt").write_text(format_config(shown))
    return out


def _need_file(path, what):
    if not path:
        raise CLIError(f"{what} path is required")
    if not Path(path).is_file():
        raise CLIError(f"{what} not found: {path}")
    return path


def _builtin(spec: str) -> bool:
    return spec.split(":")[0] in ("synthetic", "planted")


def _load_image(spec: str) -> np.ndarray:
    """A PGM path, ``synthetic[:SEED]`` or ``planted[:SEED]`` (built-in test images)."""
    if _builtin(spec):
        name, _, seed = spec.partition(":")
        try:
            seed = int(seed or 0)
        except ValueError:
            raise CLIError(f"bad image seed in {spec!r}") from None
        if name == "planted":
            return experiments.planted_image(seed)
        return synthetic_image(128, seed=seed)
    return load_pgm(_need_file(spec, "image"))


def _load_dict(spec: str, n: int, p: int) -> np.ndarray:
    if spec == "dct":
        return init_overcomplete_dct(n, p)
    D = load_dictionary(_need_file(spec, "dictionary"))
    if D.shape[0] != n:
        raise CLIError(f"dictionary has {D.shape[0]} rows but blocks have {n} pixels")
    return D


def _list(text, typ=float):
    try:
        return tuple(typ(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise CLIError(f"cannot parse list {text!r}") from None


def _learn_cfg(cfg, m, n) -> LearnConfig:
    T_star = cfg["T_star"] or experiments.default_T_star(m, n)
    return LearnConfig(lambda0=cfg["lambda0"], lambda_star=cfg["lambda_star"], T_star=T_star,
                       T_max=cfg["T_max"], seed=cfg["seed"], recovery_lam=cfg["lam"],
                       n_jobs=cfg["n_jobs"])


def cmd_sample(cfg):
    cfg["scheme"] = cfg["scheme"] or "big"
    out = _echo(cfg, "sample", ("image", "block_edge", "ratio", "scheme", "seed", "out"))
    blocks = extract_blocks(_load_image(cfg["image"]), cfg["block_edge"])
    if cfg["scheme"] == "identity":
        phis = np.broadcast_to(np.eye(blocks.n), (blocks.N, blocks.n, blocks.n))
        mset = measure_blocks(blocks.vectors, phis, blocks.means, Scheme.EXPLICIT, cfg["seed"],
                              (blocks.block_edge, blocks.width, blocks.height))
    else:
        m = experiments.ratio_to_m(cfg["ratio"], blocks.n)
        mset = measure_image(blocks, m, Scheme.parse(cfg["scheme"]), cfg["seed"])
    path = out / "measurements.bcs"
    save_measurements(path, mset)
    print(f"wrote {path}: N={mset.N} m={mset.m} n={mset.n} scheme={mset.scheme.name.lower()}")


def cmd_learn(cfg):
    mset = load_measurements(_need_file(cfg["measurements"], "measurement file"))
    reference = _load_image(cfg["reference"]) if cfg["reference"] else None
    D0 = _load_dict(cfg["dict"], mset.n, cfg["p"])
    out = _echo(cfg, "learn", ("measurements", "dict", "p", "lambda0", "lambda_star", "T_star",
                               "T_max", "lam", "seed", "reference", "n_jobs", "out"))
    if mset.scheme == Scheme.FIXED_SHARED and mset.m < mset.n:
        print("dlm learn: warning: every block shares one sensing matrix with m < n; the "
              "dictionary update is ill-posed (singular Hessian) and learning may degrade "
              "recovery", file=sys.stderr)
    lcfg = _learn_cfg(cfg, mset.m, mset.n)
    D, _, history = dlm_learn(mset, D0, lcfg, reference=reference)
    save_dictionary(D, out / "dictionary.dic")
    (out / "history.csv").write_text(history.to_csv())
    print(f"wrote {out / 'dictionary.dic'} and {out / 'history.csv'} ({len(history)} iterations)")
    if reference is not None and history.records:
        print(f"psnr initial {history.initial_psnr:.4f} final {history.records[-1].psnr:.4f}")


def cmd_recover(cfg, dicts):
    mset = load_measurements(_need_file(cfg["measurements"], "measurement file"))
    reference = _load_image(cfg["reference"]) if cfg["reference"] else None
    specs = dicts or [cfg["dict"]]
    loaded = [_load_dict(spec, mset.n, cfg["p"]) for spec in specs]
    out = _echo(cfg, "recover", ("measurements", "dict", "p", "lam", "lambda_star", "reference",
                                 "n_jobs", "out"))
    lam = cfg["lam"] if cfg["lam"] is not None else cfg["lambda_star"]
    rows = []
    for k, (spec, D) in enumerate(zip(specs, loaded)):
        img = recover_image(mset, D, lam, n_jobs=cfg["n_jobs"])
        save_pgm(out / f"recovered_{k}.pgm", img)
        score = None if reference is None else psnr(reference, img)
        rows.append({"index": k, "dictionary": spec, "lam": lam, "psnr": score})
        if score is not None:
            print(f"psnr {k} {spec} {format_value(float(capped(score)))}")
    write_csv(out / "recovery.csv", rows, ["index", "dictionary", "lam", "psnr"])


def cmd_analyze(cfg):
    out = _echo(cfg, "analyze", ("what", "n", "atoms", "m", "N_values", "trials", "draws",
                                 "seed", "out"))
    what = cfg["what"]
    n, p, m, seed = cfg["n"], cfg["atoms"], cfg["m"], cfg["seed"]
    N_values = _list(cfg["N_values"], int)
    trials = max(cfg["trials"], 1)
    known = {"hessian", "uniqueness", "chernoff", "unbiasedness", "accuracy", "gamma", "all"}
    if what not in known:
        raise CLIError(f"unknown analysis {what!r}; choose from {', '.join(sorted(known))}")
    X, D, codes = analysis.synthetic_problem(n, p, max(N_values), seed)
    written = []
    if what in ("hessian", "all"):
        rows = []
        for N in N_values:
            for scheme in (Scheme.FIXED_SHARED, Scheme.BIG):
                phis = analysis.generate_block_matrices(scheme, seed, N, m, n)
                lmin, lmax = analysis.hessian_extremes(phis, codes.alpha[:N])
                rows.append({"N": N, "scheme": scheme.name.lower(), "lambda_min": lmin,
                             "lambda_max": lmax, "relative": lmin / lmax,
                             "positive_definite": analysis.is_positive_definite(lmin, lmax)})
        written.append(write_csv(out / "hessian.csv", rows))
    if what in ("uniqueness", "all"):
        rows = analysis.uniqueness_sweep(codes.alpha, n, m, N_values, trials, seed)
        written.append(write_csv(out / "uniqueness.csv", rows))
    if what in ("chernoff", "all"):
        rows = analysis.chernoff_tail_experiment(n * p, max(N_values), trials, (0.25, 0.5, 0.75),
                                                 seed)
        written.append(write_csv(out / "chernoff.csv", rows))
    if what in ("unbiasedness", "all"):
        N = N_values[0]
        sub = analysis.SparseCodeSet(codes.alpha[:N], codes.lam)
        rows = []
        for k in range(trials):
            probe = analysis.synthetic_problem(n, p, 1, seed + 1 + k)[1]
            rep = analysis.unbiasedness_test(X[:N], sub, probe, m, cfg["draws"], seed + k)
            rows.append({"probe": k, "mean_g": rep.mean_g, "gbar": rep.gbar,
                         "rel_gap": rep.rel_gap, "std_err": rep.std_err,
                         "within_3se": rep.within(3.0)})
        written.append(write_csv(out / "unbiasedness.csv", rows))
    if what in ("accuracy", "all"):
        reps = analysis.accuracy_experiment(X, codes, m, N_values, trials, seed)
        written.append(write_csv(out / "accuracy_trials.csv",
                                 [vars(r) | {"bound_holds": r.bound_holds} for r in reps]))
        written.append(write_csv(out / "accuracy.csv", analysis.summarize_accuracy(reps)))
    if what in ("gamma", "all"):
        rows = []
        for N in N_values:
            sub = analysis.SparseCodeSet(codes.alpha[:N], codes.lam)
            rows.append({"N": N, "gamma": analysis.concentration_gamma(X[:N], D, sub)})
        written.append(write_csv(out / "gamma.csv", rows))
    for path in written:
        print(f"wrote {path}")


def cmd_experiment(cfg):
    settings = experiments.ExperimentSettings(
        preset=cfg["preset"], ratios=_list(cfg["ratios"]), p=cfg["p"],
        scheme=cfg["scheme"],
        seed=cfg["seed"], block_edge=cfg["block_edge"], lambda0=cfg["lambda0"],
        lambda_star=cfg["lambda_star"], T_star=cfg["T_star"], T_max=cfg["T_max"],
        recovery_lam=cfg["lam"], trials=cfg["trials"],
        dict_path=None if cfg["dict"] == "dct" else cfg["dict"], n_jobs=cfg["n_jobs"])
    out = _echo(cfg, "experiment", ("preset", "image", "ratios", "p", "scheme", "seed",
                                    "block_edge", "lambda0", "lambda_star", "T_star", "T_max",
                                    "lam", "trials", "dict", "n_jobs", "out"))
    rows = experiments.run_preset(_load_image(cfg["image"]), settings)
    path = write_csv(out / f"{settings.preset}.csv", rows)
    print(f"{'ratio':>6} {'m':>3} {'universal':>10} {'adaptive':>10}   full-scale reference")
    for r in rows:
        ref = "" if r["reference_universal"] is None else \
            f"   {r['reference_universal']:.2f} / {r['reference_adaptive']:.2f}"
        print(f"{r['ratio']:>6.2f} {r['m']:>3d} {r['universal_psnr']:>10.2f} "
              f"{r['adaptive_psnr']:>10.2f}{ref}")
    print(f"wrote {path}")


def cmd_plot_data(cfg):
    out = _echo(cfg, "plot-data", ("image", "block_edge", "ratio", "dict", "p", "lam", "T_max",
                                   "seed", "n_jobs", "out"))
    img = _load_image(cfg["image"])
    n = cfg["block_edge"] ** 2
    D0 = _load_dict(cfg["dict"], n, cfg["p"])
    m = experiments.ratio_to_m(cfg["ratio"], n)
    lam = cfg["lam"] if cfg["lam"] is not None else 0.01
    curves = experiments.fixed_vs_varying(img, D0, m, lam, cfg["T_max"], cfg["seed"],
                                          cfg["block_edge"], cfg["n_jobs"])
    rows = [{"t": -1, "psnr_varying": curves["varying"].initial_psnr,
             "psnr_fixed": curves["fixed"].initial_psnr}]
    for rv, rf in zip(curves["varying"].records, curves["fixed"].records):
        rows.append({"t": rv.t, "psnr_varying": rv.psnr, "psnr_fixed": rf.psnr})
    path = write_csv(out / "fixed_vs_varying.csv", rows)
    print(f"wrote {path}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--n-jobs", dest="n_jobs", type=int)

    learning = argparse.ArgumentParser(add_help=False)
    learning.add_argument("--dict", help="'dct' or a DIC1 file")
    learning.add_argument("--p", type=int, help="atoms of the DCT dictionary")
    learning.add_argument("--lambda0", type=float)
    learning.add_argument("--lambda-star", dest="lambda_star", type=float)
    learning.add_argument("--T-star", dest="T_star", type=int)
    learning.add_argument("--T-max", dest="T_max", type=int)
    learning.add_argument("--lam", type=float, help="recovery penalty (default: lambda*)")
    learning.add_argument("--reference", help="reference image for PSNR (same forms as --image)")

    imaging = argparse.ArgumentParser(add_help=False)
    imaging.add_argument("--image", help="PGM path, synthetic[:SEED] or planted[:SEED]")
    imaging.add_argument("--block-edge", dest="block_edge", type=int)
    imaging.add_argument("--ratio", type=float)

    parser = argparse.ArgumentParser(prog="dlm", description="Dictionary learning from "
                                     "block-wise compressive measurements.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("sample", parents=[common, imaging], help="measure an image")
    p.add_argument("--scheme", choices=SCHEME_CHOICES)
    p = sub.add_parser("learn", parents=[common, learning], help="learn a dictionary")
    p.add_argument("--measurements")
    p = sub.add_parser("recover", parents=[common, learning], help="recover an image")
    p.add_argument("--measurements")
    p.add_argument("--also", action="append", default=[], metavar="DICT",
                   help="further dictionaries to recover with")
    p = sub.add_parser("analyze", parents=[common], help="random-matrix checks")
    p.add_argument("--what", help="hessian|uniqueness|chernoff|unbiasedness|accuracy|gamma|all")
    p.add_argument("--n", type=int)
    p.add_argument("--atoms", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--N-values", dest="N_values")
    p.add_argument("--trials", type=int)
    p.add_argument("--draws", type=int)
    p = sub.add_parser("experiment", parents=[common, learning, imaging],
                       help="universal vs adaptive table")
    p.add_argument("--preset", choices=experiments.PRESETS)
    p.add_argument("--ratios", help="comma-separated sampling ratios")
    p.add_argument("--scheme", choices=SCHEME_CHOICES[:-1])
    p.add_argument("--trials", type=int)
    sub.add_parser("plot-data", parents=[common, learning, imaging],
                   help="PSNR curves, shared vs per-block sensing")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        if args.command == "sample":
            cmd_sample(cfg)
        elif args.command == "learn":
            cmd_learn(cfg)
        elif args.command == "recover":
            cmd_recover(cfg, [cfg["dict"]] + [str(Path(d).resolve()) if d != "dct" else d
                                              for d in args.also])
        elif args.command == "analyze":
            cmd_analyze(cfg)
        elif args.command == "experiment":
            cmd_experiment(cfg)
        elif args.command == "plot-data":
            cmd_plot_data(cfg)
    except (CLIError, ImageError, OSError, ValueError) as exc:
        print(f"dlm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
