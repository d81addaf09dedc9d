"""Command-line entry point: ``semirad <subcommand> --scenario FILE``.

Exit codes: 0 pass, 1 physics-check failure, 2 usage or config error,
3 numerical rejection.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigError, NumericalRejection
from .gridlab import set_fft_workers
from .scenario import compare_certificates, load_scenario, run_scenario

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
THREADS_ENV = "SEMIRAD_THREADS"
STAGE_COMMANDS = ("validate", "moments", "certify", "radiate", "oracle", "spectrum", "run")

log = logging.getLogger("semirad")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])


def write_outputs(result, out: Path) -> list:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    tables = (("moments.csv", ("t", "m", "Ix", "Iy", "Iz"), result.moments),
              ("flux.csv", ("R0", "t", "P"), result.flux),
              ("flux_oracle.csv", ("R0", "t", "P"), result.oracle_flux),
              ("spectrum.csv", ("omega", "amplitude"), result.spectrum))
    for name, header, rows in tables:
        if rows is not None:
            _write_csv(out / name, header, rows)
            written.append(name)
    if result.history is not None:
        result.history.save(out / "history.bin")
        written.append("history.bin")
    (out / "certificate.json").write_text(result.certificate.to_json() + "\n")
    written.append("certificate.json")
    return written


def _threads(arg) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}")
    return max(1, arg or 1)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semirad", description="Radiation from quantum probability currents.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        s = sub.add_parser(name, help=f"run the pipeline through '{name}'")
        s.add_argument("--scenario", required=True, help="scenario YAML file or bundled scenario name")
        s.add_argument("--out", type=Path, default=None, help="output directory (default: print certificate)")
        s.add_argument("--max-order", type=int, default=None, help="override analysis.max_order")
        s.add_argument("--oracle", choices=("on", "off"), default=None, help="force the oracle on or off")
        s.add_argument("--threads", type=int, default=None, help=f"worker threads (env {THREADS_ENV} overrides)")
    c = sub.add_parser("compare", help="compare two certificate files")
    c.add_argument("a", type=Path)
    c.add_argument("b", type=Path)
    c.add_argument("--tol", type=float, default=1e-3, help="relative tolerance")
    c.add_argument("--skip", nargs="*", default=[], help="top-level sections to ignore, e.g. residuals")
    return p


def _compare(args) -> int:
    try:
        a = json.loads(args.a.read_text())
        b = json.loads(args.b.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read certificate: {exc}")
    if not args.tol > 0:
        raise ConfigError("tolerance must be > 0", "--tol")
    diffs = compare_certificates(a, b, args.tol, set(args.skip))
    for key, x, y, rel in diffs:
        print(f"{key}: {x!r} vs {y!r} (rel {rel:.3g})")
    if not diffs:
        print("no differences")
    return EXIT_PASS if not diffs else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "compare":
            return _compare(args)
        scn = load_scenario(args.scenario)
        if args.max_order is not None:
            if args.max_order < 1:
                raise ConfigError("must be >= 1", "--max-order")
            scn = scn.with_max_order(args.max_order)
        threads = _threads(args.threads)
        set_fft_workers(threads)
        use_oracle = None if args.oracle is None else args.oracle == "on"
        result = run_scenario(scn, args.command, use_oracle, threads)
        cert = result.certificate
        if args.out is not None:
            for name in write_outputs(result, args.out):
                log.info("wrote %s", args.out / name)
        else:
            print(cert.to_json())
        print(f"{scn.id}: {cert.verdict}", file=sys.stderr)
        return EXIT_PASS if cert.verdict == "pass" else EXIT_FAIL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalRejection as exc:
        print(f"numerical rejection: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
