"""Command-line experiment driver.

Subcommands:
  build    write a CT instance (system matrix, observation, ground truth)
  solve    run a solver on an instance and log convergence as CSV
  compare  summarize several solve logs side by side

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time

import numpy as np

from . import ct, linops, metrics, solvers
from .linops import FileFormatError
from .prox import Box

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

CSV_HEADER = "epoch,wall_seconds,tv_objective,constraint_error,primal_distance,psnr_db"
CSV_COLUMNS = CSV_HEADER.split(",")

INSTANCE_META = "meta.txt"
INSTANCE_FILES = {"phi": "phi.csr", "observed": "observed.vec", "truth": "truth.vec"}


def _write_text(path, text):
    linops.atomic_write_bytes(path, text.encode("ascii"))


def _format_meta(pairs):
    return "".join(f"{key}={value}\n" for key, value in pairs)


def _parse_meta(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise FileFormatError(f"{path}: no such file") from None
    meta = {}
    for line in raw.decode("ascii", errors="replace").splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise FileFormatError(f"{path}: malformed line {line!r}")
        key, value = line.split("=", 1)
        meta[key] = value
    return meta, raw


def cmd_build(args):
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    if args.image is not None:
        u_true, height, width = ct.read_pgm(args.image)
        if height != width:
            raise ValueError(f"input image must be square, got {width}x{height}")
        n = height
    else:
        n = args.size
        u_true = ct.shepp_logan_phantom(n)
    geometry = ct.RadonGeometry(n, args.angles, args.detectors)
    phi = ct.build_radon_matrix(geometry)
    obs = ct.simulate_observation(phi, u_true, args.sigma, args.noise_seed)

    linops.write_csr(os.path.join(out_dir, INSTANCE_FILES["phi"]), phi)
    linops.write_vec(os.path.join(out_dir, INSTANCE_FILES["observed"]), obs.data)
    linops.write_vec(os.path.join(out_dir, INSTANCE_FILES["truth"]), u_true)
    ct.write_pgm(os.path.join(out_dir, "truth.pgm"), u_true, n, n)
    meta = _format_meta(
        [
            ("format", "ct-instance-v1"),
            ("image_side", n),
            ("num_angles", geometry.num_angles),
            ("num_detectors", geometry.num_detectors),
            ("rows", phi.rows),
            ("cols", phi.cols),
            ("nnz", phi.nnz),
            ("sigma", repr(float(args.sigma))),
            ("noise_seed", args.noise_seed),
            ("epsilon_bar", repr(obs.epsilon_bar)),
            ("phi", INSTANCE_FILES["phi"]),
            ("observed", INSTANCE_FILES["observed"]),
            ("truth", INSTANCE_FILES["truth"]),
        ]
    )
    _write_text(os.path.join(out_dir, INSTANCE_META), meta)
    print(f"instance written to {out_dir}: {phi.rows}x{phi.cols} matrix, nnz={phi.nnz}, "
          f"epsilon_bar={obs.epsilon_bar:.6g}")
    return EXIT_OK


def _load_instance(instance_dir):
    meta_path = os.path.join(instance_dir, INSTANCE_META)
    meta, raw = _parse_meta(meta_path)
    for key in ("format", "image_side", "num_angles", "num_detectors", "epsilon_bar", "phi", "observed"):
        if key not in meta:
            raise FileFormatError(f"{meta_path}: missing key '{key}'")
    if meta["format"] != "ct-instance-v1":
        raise FileFormatError(f"{meta_path}: unsupported format {meta['format']!r}")
    phi = linops.read_csr(os.path.join(instance_dir, meta["phi"]))
    observed = linops.read_vec(os.path.join(instance_dir, meta["observed"]))
    truth = None
    if "truth" in meta:
        truth_path = os.path.join(instance_dir, meta["truth"])
        if os.path.exists(truth_path):
            truth = linops.read_vec(truth_path)
    n = int(meta["image_side"])
    geometry = ct.RadonGeometry(n, int(meta["num_angles"]), int(meta["num_detectors"]))
    if phi.shape != (geometry.num_rays, geometry.num_pixels):
        raise FileFormatError(f"{meta_path}: matrix shape {phi.shape} does not match the geometry")
    if observed.shape[0] != phi.rows:
        raise FileFormatError(f"{meta_path}: observed vector length does not match the matrix")
    return {
        "meta": meta,
        "meta_bytes": raw,
        "geometry": geometry,
        "phi": phi,
        "observed": observed,
        "truth": truth,
        "eps_bar": float(meta["epsilon_bar"]),
    }


def _format_cell(value):
    if value is None:
        return ""
    return repr(float(value))


def _records_to_csv(records):
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            ",".join(
                [
                    str(r.epoch),
                    _format_cell(r.wall_seconds),
                    _format_cell(r.tv_objective),
                    _format_cell(r.constraint_error),
                    _format_cell(r.primal_distance),
                    _format_cell(r.psnr_db),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def cmd_solve(args):
    instance = _load_instance(args.instance)
    geometry = instance["geometry"]
    phi = instance["phi"]
    observed = instance["observed"]
    eps_bar = instance["eps_bar"]
    n = geometry.image_side
    box = Box(args.box_min, args.box_max)

    reference = linops.read_vec(args.reference) if args.reference else None
    truth = instance["truth"]

    epochs = args.epochs
    if epochs is None:
        epochs = 200000 if args.kind == "reference" else 200
    record_every = args.record_every
    if record_every is None:
        record_every = 1000 if args.kind == "reference" else 1

    partition = ct.partition_for_blocks(geometry, args.blocks, args.block_mode)
    problem, raw_norms = solvers.build_tv_problem(
        phi, partition, observed, eps_bar, box, n, n
    )
    print(f"operator norms (power method): psi={raw_norms['psi']}, "
          f"phi blocks max={raw_norms['phi_blocks'].max():.6g}")

    grad_v, grad_h = (op for op, _ in problem.regularizers)
    start = time.monotonic()

    def on_epoch(epoch, primal):
        wall = time.monotonic() - start
        return metrics.ConvergenceRecord(
            epoch=epoch,
            wall_seconds=wall,
            tv_objective=metrics.tv_objective(primal.u, grad_v, grad_h),
            constraint_error=metrics.constraint_error(primal.u, phi, observed, eps_bar),
            primal_distance=None if reference is None else metrics.primal_distance(primal.u, reference),
            psnr_db=None if truth is None else metrics.psnr(primal.u, truth, peak=args.peak),
        )

    config = solvers.SolverConfig(
        gamma=args.gamma,
        epochs=epochs,
        seed=args.seed,
        extrapolation=args.extrapolation,
        record_every=record_every,
    )
    if args.kind == "spdhg":
        result = solvers.spdhg_epi_solve(problem, config, on_epoch=on_epoch)
    else:
        result = solvers.pdhg_deterministic_solve(problem, config, on_epoch=on_epoch)

    _write_text(args.log, _records_to_csv(result.records))
    linops.write_vec(args.state, result.primal.u)
    ct.write_pgm(args.image_out, result.primal.u, n, n)
    digest = hashlib.sha256(instance["meta_bytes"]).hexdigest()
    _write_text(
        args.log + ".meta",
        _format_meta(
            [
                ("instance", args.instance),
                ("instance_digest", digest),
                ("kind", args.kind),
                ("blocks", args.blocks),
                ("block_mode", args.block_mode),
                ("gamma", repr(float(args.gamma))),
                ("epochs", epochs),
                ("seed", args.seed),
                ("extrapolation", args.extrapolation),
                ("record_every", record_every),
            ]
        ),
    )
    final = result.records[-1]
    print(f"{args.kind} finished: epoch={final.epoch} tv={final.tv_objective:.6g} "
          f"constraint_error={final.constraint_error:.6g}")
    return EXIT_OK


def _read_log(path):
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise FileFormatError(f"{path}: no such file") from None
    if not lines:
        raise FileFormatError(f"{path}: empty log")
    header = lines[0].split(",")
    for column in CSV_COLUMNS:
        if column not in header:
            raise FileFormatError(f"{path}: missing column '{column}'")
    if header != CSV_COLUMNS:
        raise FileFormatError(f"{path}: unexpected column order {lines[0]!r}")
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != len(CSV_COLUMNS):
            raise FileFormatError(f"{path}: row with {len(cells)} cells: {line!r}")
        rows.append(
            {
                "epoch": int(cells[0]),
                "wall_seconds": float(cells[1]),
                "tv_objective": float(cells[2]),
                "constraint_error": float(cells[3]),
                "primal_distance": None if cells[4] == "" else float(cells[4]),
                "psnr_db": None if cells[5] == "" else float(cells[5]),
            }
        )
    if not rows:
        raise FileFormatError(f"{path}: no data rows")
    return rows


def cmd_compare(args):
    logs = []
    digests = []
    for path in args.logs:
        rows = _read_log(path)
        sidecar, _ = _parse_meta(path + ".meta")
        if "instance_digest" not in sidecar:
            raise FileFormatError(f"{path}.meta: missing instance_digest")
        digests.append(sidecar["instance_digest"])
        logs.append((path, rows))
    if len(set(digests)) > 1:
        raise ValueError("logs were produced on different instances; refusing to compare")

    def first_epoch_below(rows, threshold):
        for row in rows:
            if row["primal_distance"] is not None and row["primal_distance"] <= threshold:
                return row["epoch"]
        return None

    base = logs[0][1][-1]
    print(f"{'log':40s} {'epoch':>8s} {'tv':>14s} {'constraint':>14s} {'psnr':>10s} {'dist<=thr':>10s}")
    for path, rows in logs:
        final = rows[-1]
        reach = first_epoch_below(rows, args.distance_threshold)
        psnr_cell = "" if final["psnr_db"] is None else f"{final['psnr_db']:.2f}"
        reach_cell = "-" if reach is None else str(reach)
        print(f"{path[:40]:40s} {final['epoch']:8d} {final['tv_objective']:14.6g} "
              f"{final['constraint_error']:14.6g} {psnr_cell:>10s} {reach_cell:>10s}")
    print("deltas vs first log (final epoch):")
    for path, rows in logs:
        final = rows[-1]
        d_tv = final["tv_objective"] - base["tv_objective"]
        d_ce = final["constraint_error"] - base["constraint_error"]
        if final["psnr_db"] is None or base["psnr_db"] is None:
            d_ps = ""
        else:
            d_ps = f"{final['psnr_db'] - base['psnr_db']:+.3f}"
        print(f"{path[:40]:40s} tv{d_tv:+.6g} constraint{d_ce:+.6g} psnr{d_ps}")
    return EXIT_OK


def apply_config_file(argv):
    """Inject key=value pairs from a '--config file' as defaults.

    The injected flags land right after the subcommand, so flags given
    explicitly on the command line override them.
    """
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        raise ValueError("--config requires a file path")
    if at == 0:
        raise ValueError("--config must follow a subcommand")
    pairs, _ = _parse_meta(argv[at + 1])
    rest = list(argv[:at]) + list(argv[at + 2 :])
    injected = []
    for key, value in pairs.items():
        injected += [f"--{key.replace('_', '-')}", value]
    return rest[:1] + injected + rest[1:]


def build_parser():
    parser = argparse.ArgumentParser(prog="epirecon", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    config_help = "key=value file with defaults for the flags below; explicit flags win"

    p_build = sub.add_parser("build", help="write a CT instance to a directory")
    p_build.add_argument("--config", default=None, help=config_help)
    p_build.add_argument("--out", required=True, help="output directory")
    p_build.add_argument("--size", type=int, default=64, help="image side in pixels")
    p_build.add_argument("--angles", type=int, default=30, help="number of projection angles")
    p_build.add_argument("--detectors", type=int, default=None,
                         help="detectors per angle (default: ceil(sqrt(2) n) + 1)")
    p_build.add_argument("--sigma", type=float, default=10.0,
                         help="noise standard deviation on the [0, 255] intensity scale")
    p_build.add_argument("--noise-seed", type=int, default=0)
    p_build.add_argument("--image", default=None, help="square 8-bit PGM to use instead of the phantom")
    p_build.set_defaults(func=cmd_build)

    p_solve = sub.add_parser("solve", help="run a solver on a built instance")
    p_solve.add_argument("--config", default=None, help=config_help)
    p_solve.add_argument("--instance", required=True, help="instance directory from 'build'")
    p_solve.add_argument("--kind", choices=("spdhg", "pdhg", "reference"), default="spdhg")
    p_solve.add_argument("--blocks", type=int, default=10, help="fidelity blocks L")
    p_solve.add_argument("--block-mode", choices=("rows", "angles"), default="rows")
    p_solve.add_argument("--gamma", type=float, default=0.99)
    p_solve.add_argument("--epochs", type=int, default=None,
                         help="default 200, or 200000 for --kind reference")
    p_solve.add_argument("--seed", type=int, default=0)
    p_solve.add_argument("--extrapolation", choices=solvers.EXTRAPOLATION_MODES, default="algorithm1")
    p_solve.add_argument("--record-every", type=int, default=None,
                         help="epochs between log rows (default 1, or 1000 for reference)")
    p_solve.add_argument("--box-min", type=float, default=0.0)
    p_solve.add_argument("--box-max", type=float, default=255.0)
    p_solve.add_argument("--peak", type=float, default=255.0, help="PSNR peak value")
    p_solve.add_argument("--reference", default=None, help="VEC1 file with u* for the primal distance")
    p_solve.add_argument("--log", required=True, help="output CSV path")
    p_solve.add_argument("--state", required=True, help="output VEC1 path for the final signal")
    p_solve.add_argument("--image-out", required=True, help="output PGM path for the final image")
    p_solve.set_defaults(func=cmd_solve)

    p_cmp = sub.add_parser("compare", help="summarize solve logs")
    p_cmp.add_argument("--config", default=None, help=config_help)
    p_cmp.add_argument("logs", nargs="+", help="CSV logs written by 'solve'")
    p_cmp.add_argument("--distance-threshold", type=float, default=1e4,
                       help="primal-distance level for the first-epoch column")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        argv = apply_config_file(list(argv))
    except FileFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except solvers.DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
