"""Command line entry point ``calderon``.

Exit codes: 0 success, 2 invariant failure, 3 configuration error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import CalderonError, InvalidConfig, NumericalFailure

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="calderon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("forward", help="synthesise partial DtN data for a phantom")
    f.add_argument("--config", required=True)
    f.add_argument("--out", required=True)

    r = sub.add_parser("reconstruct", help="recover transform samples and q from stored data")
    r.add_argument("--config", required=True)
    r.add_argument("--dtn", required=True, help="directory written by 'calderon forward'")
    r.add_argument("--out", required=True)
    r.add_argument("--emit-plots", action="store_true", help="write SVG heatmaps")
    r.add_argument("--oracle", action="store_true", help="use exact CGO traces instead of the BIE")

    s = sub.add_parser("selftest", help="run the invariant suites")
    s.add_argument("--config", required=True)
    s.add_argument("--quick", action="store_true", help="coarse grid, two tau values")
    s.add_argument("--csv", default=None, help="where to write the measured constants")
    return p


def _setup_logging(verbose: bool, out_dir=None) -> None:
    root = logging.getLogger("calderon")
    root.setLevel(logging.INFO)
    root.handlers.clear()
    if verbose:
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        root.addHandler(h)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(Path(out_dir) / "run.log", mode="w")
        fh.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        root.addHandler(fh)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    out = getattr(args, "out", None)
    _setup_logging(args.verbose, out)
    log = logging.getLogger("calderon")
    try:
        from . import pipeline

        config = pipeline.RunConfig.from_json(args.config)
        if args.command == "forward":
            res = pipeline.run_forward(config, args.out)
            print(f"wrote DtN data ({res.dtn_q.rows.size} x {res.dtn_q.cols.size}) to {args.out}")
            return EXIT_OK
        if args.command == "reconstruct":
            res = pipeline.run_reconstruction(config, args.dtn, oracle=args.oracle, out_dir=args.out,
                                              emit_plots=args.emit_plots)
            err = res.report.get("rel_l2_error")
            msg = f"{res.report['n_chords']} chords, route {res.report['route']}"
            if err is not None:
                msg += f", relative L2 error {err:.4f}"
            print(msg)
            return EXIT_OK
        from .selftest import run_selftest

        rep = run_selftest(config, quick=args.quick, out_csv=args.csv, progress=log.info)
        for r in rep.records:
            flag = "pass" if r.passed else ("xfail" if r.expected_failure else "FAIL")
            print(f"{flag:5s} {r.check:22s} tau={r.tau:<6g} value={r.value:.3e} threshold={r.threshold:.1e} {r.note}")
        return rep.exit_code
    except InvalidConfig as exc:
        log.error("configuration error (%s): %s", type(exc).__name__, exc)
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        log.error("numerical failure (%s): %s", type(exc).__name__, exc)
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CalderonError as exc:
        log.error("invariant failure (%s): %s", type(exc).__name__, exc)
        print(f"invariant failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
