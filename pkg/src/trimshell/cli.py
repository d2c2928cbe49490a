"""Batch command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(at least one study cell failed; the CSV is still written).

The environment variable ``TRIMSHELL_THREADS`` caps the number of worker
processes used for independent study cells (default 1).
"""
import argparse
import os
import sys
import time

from .config import ConfigError, RunConfig, load_config

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("TRIMSHELL_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trimshell", description="Kirchhoff-Love shells on trimmed spline patches")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    run = sub.add_parser("run", help="run a convergence study of a built-in benchmark")
    run.add_argument("benchmark")
    run.add_argument("--n", type=int, nargs="+", help="elements per direction (default: benchmark grid)")
    run.add_argument("--p", type=int, nargs="+", help="polynomial degrees (default: benchmark grid)")
    run.add_argument("--alpha", type=float, help="extension threshold in (0, 1]")
    run.add_argument("--g", type=int, help="Gauss points per direction (default p+1)")
    run.add_argument("--q", type=int, default=3, help="sign-detection grid parameter")
    run.add_argument("--out", default=".", help="output directory")
    run.add_argument("--plot", action="store_true", help="write SVG log-log plots")
    run.add_argument("--run-id", default="", help="identifier stored in the CSV")
    sub.add_parser("quadrature-selftest", help="disk area/circumference convergence check")
    sub.add_parser("list-benchmarks", help="print the built-in benchmark names")
    custom = sub.add_parser("custom", help="run a study described by a config file")
    custom.add_argument("--config", required=True)
    return parser


def _fmt(v) -> str:
    return f"{v:.4e}" if isinstance(v, float) else str(v)


def run_config(cfg: RunConfig, out=sys.stdout, err=sys.stderr) -> int:
    """Execute a study described by ``cfg``; return the exit code."""
    from .plotting import plots_from_rows
    from .verification import read_csv, run_study, write_csv

    try:
        definition = cfg.definition()
    except (KeyError, ConfigError) as exc:
        print(f"trimshell: {exc.args[0] if exc.args else exc}", file=err)
        return EXIT_USAGE
    n_list = cfg.n or list(definition.n_list)
    p_list = cfg.p or list(definition.p_list)
    alpha = definition.alpha if cfg.alpha is None else cfg.alpha
    run_id = cfg.run_id or time.strftime("%Y%m%dT%H%M%S")

    def progress(rep):
        status = "ok" if rep.ok else "FAILED"
        cols = ("err_l2_u", "err_residual", "energy", "err_energy", "cond_est")
        vals = " ".join(f"{c}={_fmt(getattr(rep, c))}" for c in cols)
        print(f"{definition.name} p={rep.p} n={rep.n} {status} {vals} t={rep.wall_time_s:.1f}s", file=out, flush=True)

    study = run_study(definition, n_list, p_list, alpha=alpha, q=cfg.q, g=cfg.g, progress=progress,
                      workers=_workers())
    os.makedirs(cfg.out, exist_ok=True)
    csv_path = os.path.join(cfg.out, f"{definition.name}.csv")
    write_csv(study, csv_path, run_id)
    print(f"wrote {csv_path}", file=out)
    for (p, name), rate in sorted(study.rates.items()):
        print(f"rate p={p} {name}: {rate:.3f}", file=out)
    if cfg.plot:
        for path in plots_from_rows(read_csv(csv_path), cfg.out, prefix=f"{definition.name}_"):
            print(f"wrote {path}", file=out)
    failed = [r for r in study.reports if not r.ok]
    for r in failed:
        print(f"trimshell: numerical failure at p={r.p} n={r.n}: {r.failure}", file=err)
    return EXIT_NUMERICAL if failed else EXIT_OK


def _selftest(out) -> int:
    from .verification import quadrature_selftest

    status = EXIT_OK
    for p, res in quadrature_selftest().items():
        ok = res["area"] >= p + 1 and res["length"] >= p + 1
        status = status if ok else EXIT_NUMERICAL
        print(f"p={p}: area order {res['area']:.2f}, circumference order {res['length']:.2f} "
              f"(required >= {p + 1}) {'PASS' if ok else 'FAIL'}", file=out)
    return status


def main(argv=None, out=None, err=None) -> int:
    """Entry point; returns the process exit code."""
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError(parser.format_usage().strip())
        if args.command == "list-benchmarks":
            from .benchmarks import BENCHMARKS

            for name, d in BENCHMARKS.items():
                print(f"{name}\t{d.description}", file=out)
            return EXIT_OK
        if args.command == "quadrature-selftest":
            return _selftest(out)
        if args.command == "run":
            cfg = RunConfig(benchmark=args.benchmark, n=args.n or [], p=args.p or [], alpha=args.alpha,
                            g=args.g, q=args.q, out=args.out, plot=args.plot, run_id=args.run_id)
        else:
            cfg = load_config(args.config)
    except _UsageError as exc:
        print(str(exc), file=err)
        return EXIT_USAGE
    except (ConfigError, OSError) as exc:
        print(f"trimshell: {exc}", file=err)
        return EXIT_USAGE
    return run_config(cfg, out, err)


def main_exit() -> None:  # pragma: no cover - console-script wrapper
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
