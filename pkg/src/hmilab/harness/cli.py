"""`lab` command line: sweep, predict, spectrum and train subcommands.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from ..datagen import DataStream, sample_planted_weights
from ..errors import ConfigError, HmiLabError, NumericalError, ValidationError
from ..readout import algorithm1_once, write_network
from ..spectral import spectral_estimator, write_spectrum
from .config import OUTPUT_DIR_ENV, ExperimentConfig, load_config, recipe_path
from .outputs import emit_outputs, spectrum_name, theory_records
from .sweep import data_seed, planted_seed, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _resolve_config(arg: str, paper_scale: bool, out: str | None) -> ExperimentConfig:
    path = Path(arg)
    cfg = load_config(path if path.exists() or path.suffix else recipe_path(arg))
    if paper_scale:
        cfg = cfg.at_paper_scale()
    out = out or os.environ.get(OUTPUT_DIR_ENV)
    return cfg.with_output(out) if out else cfg


def _alpha_index(cfg: ExperimentConfig, alpha: float) -> int:
    for i, a in enumerate(cfg.sweep.alphas):
        if abs(a - alpha) <= 1e-9 * max(a, 1.0):
            return i
    return len(cfg.sweep.alphas)  # seeds stay distinct from the grid cells


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args.config, args.paper_scale, args.out)

    def progress(row):
        if not args.quiet:
            status = row.error or f"r={row.spike_count} wmse={row.weighted_mse:.4g}"
            print(f"alpha={row.alpha:.4g} seed={row.seed} {status} ({row.wall_time_ms:.0f} ms)", file=sys.stderr)

    rows = run_sweep(cfg, threads=args.threads, progress=progress)
    files = emit_outputs(rows, cfg)
    failed = [r for r in rows if r.error]
    print(json.dumps({"rows": len(rows), "failed": len(failed), "output": str(files["manifest.json"].parent)}))
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_predict(args) -> int:
    cfg = _resolve_config(args.config, args.paper_scale, None)
    text = json.dumps(theory_records(cfg), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    cfg = _resolve_config(args.config, args.paper_scale, args.out)
    spec = cfg.spec()
    W = sample_planted_weights(spec, planted_seed(cfg, args.seed))
    n = max(int(round(args.alpha * spec.dim_d)), 1)
    stream = DataStream(spec, W, n, data_seed(cfg, args.seed, _alpha_index(cfg, args.alpha)))
    est = spectral_estimator(stream, cfg.prep(), cfg.estimator.gap_constant, r_max=cfg.r_max,
                             gap_scale=cfg.estimator.gap_scale, threads=args.threads)
    path = Path(cfg.output.directory) / "spectra" / spectrum_name(args.alpha, args.seed)
    csv_path, side = write_spectrum(path, est.eigenvalues, top_k=spec.m_star,
                                    meta={"alpha": args.alpha, "seed": args.seed, "spike_count": est.spike_count,
                                          "d": spec.dim_d})
    print(json.dumps({"spike_count": est.spike_count, "histogram": str(csv_path), "top": str(side)}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args.config, args.paper_scale, args.out)
    spec = cfg.spec()
    W = sample_planted_weights(spec, planted_seed(cfg, args.seed))
    n = max(int(round(args.alpha * spec.dim_d)), 2)
    n += n % 2
    run = algorithm1_once(spec, W, n, data_seed(cfg, args.seed, _alpha_index(cfg, args.alpha)),
                          p=cfg.network.width(n), ridge_lambda=cfg.network.ridge(n), prep=cfg.prep(),
                          activation=cfg.network.activation, gap_constant=cfg.estimator.gap_constant,
                          gap_scale=cfg.estimator.gap_scale, r_max=cfg.r_max, n_test=cfg.sweep.n_test,
                          threads=args.threads)
    report = {"spec": spec.fingerprint(), **run.report.as_dict()}
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"train_alpha_{args.alpha:.6g}_seed{args.seed}"
    (out / f"{stem}.risk.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_network(out / f"{stem}.hnet", run.network)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lab", description="Hierarchical multi-index learning laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", required=True, help="config file or bundled recipe name (fig1, fig2, figA)")
        p.add_argument("--paper-scale", action="store_true", help="use the recipe's [paper_scale] overrides")
        p.add_argument("--threads", type=int, default=1)
        if out:
            p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("sweep", help="run every (alpha, seed) cell and write the file set")
    common(p)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("predict", help="theory predictions only")
    common(p, out=False)
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_predict)
    for name, fn, help_ in (("spectrum", cmd_spectrum, "one spectrum histogram"),
                            ("train", cmd_train, "one two-stage training run")):
        p = sub.add_parser(name, help=help_)
        common(p)
        p.add_argument("--alpha", type=float, required=True)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HmiLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
