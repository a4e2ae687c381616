"""Command-line front end.

Exit codes:
    0  success
    2  usage error (bad flags or arguments)
    3  validation or configuration error (manifest, blob, shape, parallelism)
    4  divergence between the accelerator path and the oracle
    5  I/O error (missing or unreadable files)
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fixtures, oracle
from .decompose import DEFAULT_CUTOFF, calibrate_network
from .errors import DivergenceError, SNNAccelError
from .ir import ParallelismConfig, load_manifest, read_spikes, save_manifest, write_blob
from .pipeline import run_network_accel
from .schedperf import estimate

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_DIVERGENCE = 4
EXIT_IO = 5

DEFAULT_PAR = "16,16,8,4"
DEFAULT_FAST_MHZ = 500.0


def _par(args):
    return ParallelismConfig.parse(args.par, args.fast_mhz)


def _emit(doc, out, default_name):
    """Write a JSON document to ``out`` (file or directory) or stdout."""
    text = json.dumps(doc, indent=2, default=_jsonable) + "\n"
    if out is None:
        sys.stdout.write(text)
        return None
    out = Path(out)
    if out.is_dir() or out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / default_name
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    return out


def _jsonable(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _run_dir(out):
    # run writes several files, so its --report-out is always a directory
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args):
    net = load_manifest(args.manifest)
    spikes = read_spikes(args.input, net.input_bits)
    par = _par(args)
    doc = {"network": net.name, "mode": args.mode, "classifier": net.classifier_layer}
    status = EXIT_OK
    if args.mode == "oracle":
        scores = oracle.run_reference(net, spikes)[1]
    else:
        run = run_network_accel(net, spikes, par, compare=args.mode == "compare")
        scores = run.scores
        if args.report_out:
            _emit(run.report.to_dict(), _run_dir(args.report_out), "perf.json")
        if args.mode == "compare":
            doc["oracle_scores"] = run.oracle_scores
            doc["divergences"] = [
                {"layer": d.layer, "index": list(d.index), "expected": d.expected,
                 "actual": d.actual} for d in run.divergences
            ]
            doc["match"] = run.ok
            if not run.ok:
                sys.stderr.write(str(run.divergences[0].as_error()) + "\n")
                status = EXIT_DIVERGENCE
    doc["scores"] = scores
    doc["predicted"] = int(np.argmax(scores))
    _emit(doc, args.report_out and _run_dir(args.report_out), "scores.json")
    return status


def cmd_perf(args):
    par = _par(args)
    net = load_manifest(args.manifest) if args.manifest else None
    report = estimate(net, par)
    _emit(report.to_dict(), args.report_out, "perf.json")
    return EXIT_OK


def cmd_calibrate(args):
    net = load_manifest(args.manifest)
    if not args.samples:
        raise ValueError("calibration needs at least one sample blob")
    samples = [read_spikes(p, net.input_bits) for p in args.samples]
    calibrated, policies = calibrate_network(net, samples, args.policy_cutoff)
    save_manifest(calibrated, args.out or args.manifest)
    doc = {
        name: {"mode": p.mode, "threshold_exceeded_count": p.threshold_exceeded_count,
               "shifted_mass": p.shifted_mass, "total": p.total, "cutoff": p.cutoff}
        for name, p in policies.items()
    }
    _emit({"network": net.name, "policies": doc}, args.report_out, "calibration.json")
    return EXIT_OK


def cmd_fixture(args):
    if args.list:
        sys.stdout.write("\n".join(sorted(fixtures.FIXTURES)) + "\n")
        return EXIT_OK
    if args.name not in fixtures.FIXTURES:
        raise ValueError(f"unknown fixture {args.name!r}; try --list")
    if args.out is None:
        raise ValueError("--out is required")
    net = fixtures.FIXTURES[args.name](args.seed)
    out = Path(args.out)
    save_manifest(net, out / "manifest.json")
    for i in range(args.inputs):
        x = fixtures.fixture_input(net, args.seed + i)
        write_blob(out / f"input{i}.bin", x.data)
    sys.stdout.write(f"{out / 'manifest.json'}\n")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="snnaccel", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--par", default=DEFAULT_PAR, help="parallelism m,v,n,s")
    common.add_argument("--fast-mhz", type=float, default=DEFAULT_FAST_MHZ,
                        help="fast (compute) clock in MHz; the slow clock is half")
    common.add_argument("--report-out", help="output .json file or directory")
    common.add_argument("--seed", type=int, default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run a network on one input")
    r.add_argument("manifest")
    r.add_argument("input", help="input spike blob")
    r.add_argument("--mode", choices=("oracle", "accel", "compare"), default="compare")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("perf", parents=[common], help="static performance estimate")
    f.add_argument("manifest", nargs="?")
    f.set_defaults(func=cmd_perf)

    c = sub.add_parser("calibrate", parents=[common],
                       help="choose saturate or shift per layer from samples")
    c.add_argument("manifest")
    c.add_argument("samples", nargs="*", help="sample spike blobs")
    c.add_argument("--policy-cutoff", type=float, default=DEFAULT_CUTOFF)
    c.add_argument("--out", help="write the calibrated manifest here (default: in place)")
    c.set_defaults(func=cmd_calibrate)

    x = sub.add_parser("fixture", parents=[common], help="write a fixture network")
    x.add_argument("name", nargs="?")
    x.add_argument("--out")
    x.add_argument("--inputs", type=int, default=1, help="number of input blobs")
    x.add_argument("--list", action="store_true")
    x.set_defaults(func=cmd_fixture)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except DivergenceError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DIVERGENCE
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO
    except (SNNAccelError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
