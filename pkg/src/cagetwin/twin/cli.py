"""Command-line entry point: ``cagetwin <command> ...``.

Exit status is 0 on success, 1 for usage errors, 2 for unreadable or
invalid data and 3 for numerical failures such as a solver that does not
converge or a prediction that is not finite.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from ..errors import CageTwinError, FitFailure, InsufficientHfData, StageFailure
from ..gcn import GcnConfig
from ..pca import assemble_data_matrix, eigen_decompose, select_components
from ..sim.dataset import (
    generate_hf_dataset,
    generate_lf_dataset,
    read_hf_dataset,
    read_lf_dataset,
    write_hf_dataset,
    write_lf_dataset,
)
from ..sim.params import load_params
from ..sim.topology import cage
from .bundle import load_bundle, save_bundle
from .evaluation import DEFAULT_BINS, evaluate, write_report
from .ingest import IngestResult, format_timestamp, ingest_metocean, iter_records
from .pipeline import MODES, QUANTITY_NAMES, TwinConfig, TwinServer, train_bundle

log = logging.getLogger("cagetwin")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w"), True


# -- commands --------------------------------------------------------------------

def cmd_topology(args):
    topo = cage()
    doc = {
        "node_count": topo.node_count,
        "n_layers": topo.n_layers,
        "ring_nodes": topo.ring_nodes,
        "index_base": 0,
        "edges": [[int(i), int(j)] for i, j in topo.edges],
        "degrees": [int(d) for d in topo.degrees()],
        "rest_positions": topo.rest_positions.tolist(),
    }
    out, close = _open_out(args.out)
    json.dump(doc, out, indent=None if args.compact else 1)
    out.write("\n")
    if close:
        out.close()
    return EXIT_OK


def _metocean_lines(lf, start):
    header = {"schema": "cagetwin.metocean", "version": 1}
    yield json.dumps(header)
    for h, row in enumerate(lf.sea_states):
        ts = start + timedelta(minutes=10 * h)
        yield json.dumps({"ts": format_timestamp(ts), "cs": row[0], "cd": row[1], "hs": row[2],
                          "tp": row[3], "wd": row[4]})


def cmd_simulate(args):
    params = load_params(args.params)
    done = [0]

    def progress(h, n):
        if args.verbose and h % max(1, n // 20) == 0:
            log.info("simulated %d/%d", h, n)
        done[0] = h

    lf = generate_lf_dataset(args.n, seed=args.seed, params=params, progress=progress)
    write_lf_dataset(lf, args.out)
    print(f"wrote {len(lf)} scenarios to {args.out} ({len(lf.failures)} failed)")
    if args.hf_out:
        hf = generate_hf_dataset(lf, seed=args.seed, params=params)
        write_hf_dataset(hf, args.hf_out)
        print(f"wrote {len(hf)} sensor records to {args.hf_out}")
    if args.metocean_out:
        start = datetime(2024, 1, 1, tzinfo=timezone.utc)
        with open(args.metocean_out, "w") as fh:
            for line in _metocean_lines(lf, start):
                fh.write(line + "\n")
        print(f"wrote {len(lf)} metocean records to {args.metocean_out}")
    return EXIT_OK


def cmd_reduce(args):
    lf = read_lf_dataset(args.lf)
    basis = eigen_decompose(assemble_data_matrix(lf.retained()))
    k = select_components(basis.eigenvalues, args.threshold)
    cumulative = basis.with_retained(basis.total_components).explained()
    print(f"components: {basis.total_components}, retained at {args.threshold}: {k}")
    for j in range(min(args.show, basis.total_components)):
        print(f"  {j + 1:>3d}  lambda={basis.eigenvalues[j]:.6g}  cumulative={cumulative[j]:.6f}")
    if args.out:
        np.savez(args.out, phi=basis.with_retained(k).phi, eigenvalues=basis.eigenvalues)
        print(f"wrote basis to {args.out}")
    return EXIT_OK


def cmd_train(args):
    lf = read_lf_dataset(args.lf)
    hf = read_hf_dataset(args.hf)
    gcn = GcnConfig(learning_rate=args.gcn_lr, epochs=args.gcn_epochs)
    config = TwinConfig(threshold=args.threshold, mode=args.mode, seed=args.seed, gcn=gcn,
                        gcn_scenarios=args.gcn_scenarios, inputs=tuple(args.inputs.split(",")))
    bundle = train_bundle(lf, hf, config, params=load_params(args.params))
    save_bundle(bundle, args.out)
    print(f"wrote bundle to {args.out} (k={bundle.retained}, mode={bundle.deformation_mode})")
    return EXIT_OK


def _serve(server, records, args):
    out, close = _open_out(args.out)
    ddir = None
    if args.deformation_dir:
        ddir = Path(args.deformation_dir)
        ddir.mkdir(parents=True, exist_ok=True)
    try:
        n = server.run(records, out, ddir)
    finally:
        if close:
            out.close()
        else:
            out.flush()
    return n


def cmd_predict(args):
    server = TwinServer(load_bundle(args.bundle))
    result = ingest_metocean(args.input)
    n = _serve(server, result, args)
    print(f"{n} snapshots, {result.skipped} line(s) skipped", file=sys.stderr)
    for lineno, reason in result.skipped_lines:
        print(f"  line {lineno}: {reason}", file=sys.stderr)
    return EXIT_OK


class _ReloadingRecords:
    """Stream records and hot-swap the bundle when its file changes."""

    def __init__(self, server, bundle_path, lines, result):
        self.server = server
        self.path = bundle_path
        self.mtime = os.stat(bundle_path).st_mtime_ns
        self.records = iter_records(lines, result)

    def __iter__(self):
        for record in self.records:
            mtime = os.stat(self.path).st_mtime_ns
            if mtime != self.mtime:
                self.server.swap(load_bundle(self.path))
                self.mtime = mtime
                log.info("bundle reloaded from %s", self.path)
            yield record.timestamp, record.sea_state


def cmd_serve(args):
    server = TwinServer(load_bundle(args.bundle))
    result = IngestResult([])
    stream = sys.stdin if args.stream == "-" else open(args.stream)
    with stream:
        n = _serve(server, _ReloadingRecords(server, args.bundle, stream, result), args)
    summary = server.latency_summary()
    print(f"{n} snapshots, {result.skipped} line(s) skipped; latency {json.dumps(summary)}", file=sys.stderr)
    return EXIT_OK


def _strip_unit(name):
    return name.split("[", 1)[0].strip()


def read_table(path):
    """Quantity columns from a snapshot NDJSON stream or from a table file (HF .npz or CSV).

    Returns ``(names, matrix)`` with one row per record.
    """
    path = Path(path)
    if path.suffix in (".ndjson", ".jsonl"):
        rows = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    doc = json.loads(line)
                    rows.append(doc["shackle_loads"] + doc["depth_displacements"])
        return QUANTITY_NAMES, np.array(rows, dtype=float).reshape(-1, len(QUANTITY_NAMES))
    if path.suffix == ".npz":
        return QUANTITY_NAMES, read_hf_dataset(path).quantities()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    names = [_strip_unit(c) for c in rows[0]]
    cols = [j for j, n in enumerate(names) if n in QUANTITY_NAMES]
    if not cols:
        cols = [j for j, n in enumerate(names) if n not in ("scenario_id", "params_hash", "ts")]
    data = np.array([[float(r[j]) for j in cols] for r in rows[1:]], dtype=float)
    return tuple(names[j] for j in cols), data.reshape(-1, len(cols))


def _aligned(args):
    pnames, P = read_table(args.pred)
    tnames, T = read_table(args.truth)
    common = [n for n in pnames if n in tnames]
    if not common:
        raise ValueError("predictions and truth share no quantity columns")
    P = P[:, [pnames.index(n) for n in common]]
    T = T[:, [tnames.index(n) for n in common]]
    return evaluate(P, T, common, bins=args.bins)


def cmd_evaluate(args):
    report = _aligned(args)
    if args.json:
        print(json.dumps(report.table(), indent=1))
    else:
        print(report.format_table())
    return EXIT_OK


def cmd_report(args):
    report = _aligned(args)
    write_report(report, args.out)
    print(report.format_table())
    print(f"wrote mae.csv and {len(report.names)} density table(s) to {args.out}")
    return EXIT_OK


# -- wiring ----------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="cagetwin", description="Multifidelity digital twin of a flexible net cage.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("topology", help="emit the cage graph as JSON")
    s.add_argument("--out", default="-")
    s.add_argument("--compact", action="store_true")
    s.set_defaults(func=cmd_topology)

    s = sub.add_parser("simulate", help="generate a low-fidelity dataset")
    s.add_argument("--n", type=int, required=True, help="number of scenarios")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--params", help="JSON file overriding physical constants")
    s.add_argument("--out", required=True, help="dataset file (.csv or .npz)")
    s.add_argument("--hf-out", help="also write synthetic sensor records here")
    s.add_argument("--metocean-out", help="also write the sea states as a metocean NDJSON stream")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reduce", help="PCA of a low-fidelity dataset")
    s.add_argument("--lf", required=True)
    s.add_argument("--threshold", type=float, default=0.93)
    s.add_argument("--show", type=int, default=10, help="eigenvalues to list")
    s.add_argument("--out", help="write the retained basis (.npz)")
    s.set_defaults(func=cmd_reduce)

    s = sub.add_parser("train", help="train and save a twin bundle")
    s.add_argument("--lf", required=True)
    s.add_argument("--hf", required=True)
    s.add_argument("--mode", choices=MODES, default="gp-pca")
    s.add_argument("--params", help="JSON file overriding physical constants (pretension of the rest anchors)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threshold", type=float, default=0.93)
    s.add_argument("--inputs", default="current_speed,current_dir",
                   help="comma-separated sea-state fields used as GP inputs")
    s.add_argument("--gcn-epochs", type=int, default=600)
    s.add_argument("--gcn-lr", type=float, default=0.3)
    s.add_argument("--gcn-scenarios", type=int, default=150)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    for name, helptext in (("predict", "snapshots for a metocean file"),
                           ("serve", "snapshots for a metocean stream, reloading the bundle on change")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--bundle", required=True)
        if name == "predict":
            s.add_argument("--input", required=True)
        else:
            s.add_argument("--stream", default="-", help="metocean stream path, '-' for stdin")
        s.add_argument("--out", default="-")
        s.add_argument("--deformation-dir", help="write each deformation to a .npy sidecar here")
        s.set_defaults(func=cmd_predict if name == "predict" else cmd_serve)

    for name, helptext in (("evaluate", "MAE and best-fit table"),
                           ("report", "write MAE and density tables")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--pred", required=True)
        s.add_argument("--truth", required=True)
        s.add_argument("--bins", type=int, default=DEFAULT_BINS)
        if name == "evaluate":
            s.add_argument("--json", action="store_true")
            s.set_defaults(func=cmd_evaluate)
        else:
            s.add_argument("--out", required=True, help="output directory")
            s.set_defaults(func=cmd_report)
    return p


def exit_code(exc):
    """Map an exception to the documented exit status."""
    if isinstance(exc, StageFailure) and not isinstance(exc.cause, StageFailure):
        return exit_code(exc.cause) if isinstance(exc.cause, BaseException) else EXIT_NUMERIC
    if isinstance(exc, (ArithmeticError, FitFailure, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    if isinstance(exc, CageTwinError) and getattr(exc, "cause", None) is not None:
        cause = exc.cause
        return exit_code(cause) if isinstance(cause, BaseException) else EXIT_NUMERIC
    if isinstance(exc, (ValueError, OSError, KeyError, InsufficientHfData, json.JSONDecodeError)):
        return EXIT_DATA
    return EXIT_NUMERIC if isinstance(exc, CageTwinError) else EXIT_DATA


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CageTwinError, ValueError, OSError, KeyError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"cagetwin {args.command}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
