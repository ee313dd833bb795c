"""Command line entry point: ``hypercs <subcommand> [options]``.

Exit codes: 0 success, 1 bad input (unreadable or invalid files, bad
arguments), 2 unexpected internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cube import CubeSequence, read_sequence, write_sequence
from .detection import (
    CENTERING,
    ace_map,
    bulk_coherence,
    estimate_background,
    persistence_filter,
    read_map,
    read_signature,
    write_map,
    write_signature,
)
from .errors import HyperCSError
from .pipeline import ExperimentConfig, emit_report, run_pipeline
from .sampling import (
    ORDERINGS,
    build_plan,
    load_plan,
    read_measurements,
    sample_cube,
    save_plan,
    write_measurements,
)
from .solver import METHODS, SolverParams, reconstruct, write_result
from .synthdata import SceneSpec, generate_scene, preset_scenarios
from .threshold import SWEEP_MULTIPLIERS, compute_threshold, count_over, load_threshold, save_threshold

log = logging.getLogger("hypercs")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise HyperCSError(f"{path}: unreadable JSON ({exc})") from exc


def _frame_range(text: str) -> list[int]:
    try:
        first, _, last = text.partition("-")
        first = int(first)
        last = int(last) if last else first
    except ValueError:
        raise HyperCSError(f"bad frame range {text!r}; use FIRST-LAST")
    if first < 0 or last < first:
        raise HyperCSError(f"bad frame range {text!r}")
    return list(range(first, last + 1))


def _map_files(directory) -> list[Path]:
    files = sorted(Path(directory).glob("frame_*.csv"))
    if not files:
        raise HyperCSError(f"no frame_*.csv maps in {directory}")
    return files


def cmd_gen(args) -> int:
    if args.config:
        spec = SceneSpec.from_dict(_load_json(args.config))
    else:
        presets = preset_scenarios()
        if args.preset not in presets:
            raise HyperCSError(f"unknown preset {args.preset!r}; choose from {sorted(presets)}")
        spec = presets[args.preset]
    seq, sig = generate_scene(spec, args.seed)
    out = Path(args.out)
    write_sequence(seq, out)
    write_signature(sig, out / "signature.csv")
    (out / "scene.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    print(f"wrote {len(seq)} frames of {seq.shape} to {out}")
    return 0


def cmd_sample(args) -> int:
    seq = read_sequence(args.input)
    n1, n2, _ = seq.shape
    training = CubeSequence(tuple(seq[i] for i in _frame_range(args.training))) if args.training else None
    plan = build_plan(n1 * n2, args.compression, args.ordering, training=training, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_plan(plan, out / "plan.json")
    for t, frame in enumerate(seq):
        write_measurements(sample_cube(plan, frame), out / f"frame_{t:04d}.hsm")
    print(f"plan k={plan.k} of n={plan.n}; sampled {len(seq)} frames into {out}")
    return 0


def cmd_reconstruct(args) -> int:
    plan = load_plan(args.plan)
    params = SolverParams.from_dict(_load_json(args.config).get("solver", {})) if args.config else SolverParams()
    src = Path(args.measurements)
    files = sorted(src.glob("frame_*.hsm")) if src.is_dir() else [src]
    if not files:
        raise HyperCSError(f"no frame_*.hsm measurement files in {src}")
    shape = tuple(args.shape) if args.shape else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cubes = []
    for f in files:
        try:
            res = reconstruct(read_measurements(f), plan, args.method, params, shape)
        except HyperCSError as exc:
            raise HyperCSError(f"{f.name} ({args.method}): {exc}") from exc
        write_result(res, out / (f.stem + ".hsc"))
        cubes.append(res.cube)
        log.info("%s: %d iterations, converged=%s", f.name, res.iterations, res.converged)
    if src.is_dir():
        write_sequence(CubeSequence(tuple(cubes)), out)
    print(f"reconstructed {len(files)} frame(s) with {args.method} into {out}")
    return 0


def cmd_detect(args) -> int:
    seq = read_sequence(args.input)
    sig = read_signature(args.signature)
    bg_idx = _frame_range(args.background)
    if bg_idx[-1] >= len(seq):
        raise HyperCSError(f"background range exceeds the {len(seq)} available frames")
    bg = estimate_background(np.concatenate([seq[i].matrix for i in bg_idx]))
    out = Path(args.out)
    (out / "ace").mkdir(parents=True, exist_ok=True)
    (out / "bulk").mkdir(parents=True, exist_ok=True)
    for t, cube in enumerate(seq):
        a = ace_map(cube, sig, bg, args.centering, frame=t)
        write_map(a, out / "ace" / f"frame_{t:04d}.csv")
        write_map(bulk_coherence(a), out / "bulk" / f"frame_{t:04d}.csv")
    print(f"wrote ace and bulk maps for {len(seq)} frames to {out}")
    return 0


def cmd_threshold(args) -> int:
    files = _map_files(args.maps)
    idx = _frame_range(args.background)
    if idx[-1] >= len(files):
        raise HyperCSError(f"background range exceeds the {len(files)} available maps")
    spec = compute_threshold([read_map(files[i]).values for i in idx], args.alpha, args.beta, ids=idx)
    save_threshold(spec, args.out)
    print(f"T = {spec.T:.17g}")
    return 0


def _counts(files, T, persist: bool) -> list[int]:
    maps = [read_map(f) for f in files]
    if persist:
        maps = persistence_filter(maps, T)
    return [count_over(m, T) for m in maps]


def cmd_compare(args) -> int:
    raw_files, rec_files = _map_files(args.raw), _map_files(args.recon)
    if len(raw_files) != len(rec_files):
        raise HyperCSError("raw and reconstructed map directories hold different frame counts")
    T_raw, T_rec = load_threshold(args.raw_threshold).T, load_threshold(args.recon_threshold).T
    raw = _counts(raw_files, T_raw, args.persist)
    rec = _counts(rec_files, T_rec, args.persist)
    lines = ["frame,count_raw,count_recon"] + [f"{t},{a},{b}" for t, (a, b) in enumerate(zip(raw, rec))]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_sweep(args) -> int:
    files = _map_files(args.maps)
    T = load_threshold(args.threshold).T
    lines = ["frame,multiplier,threshold,count"]
    table = {m: _counts(files, m * T, args.persist) for m in SWEEP_MULTIPLIERS}
    for t in range(len(files)):
        for m in SWEEP_MULTIPLIERS:
            lines.append(f"{t},{m:.17g},{m * T:.17g},{table[m][t]}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _emit(text: str, out) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    d = _load_json(args.config) if args.config else {"preset": "release"}
    if args.seed is not None:
        d["seed"] = args.seed
    if args.workers is not None:
        d["workers"] = args.workers
    config = ExperimentConfig.from_dict(d)
    report = run_pipeline(config, args.out)
    files = emit_report(report, args.out, tuple(args.formats.split(",")))
    for method, conv in report.metadata["convergence"].items():
        print(f"{method}: {conv['converged_frames']}/{conv['frames']} frames converged")
    print(f"wrote {len(files)} report file(s) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypercs", description="Compressive hyperspectral reconstruction and detection.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", help="generate a synthetic scene")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--preset", default="release", help="named scene preset (default: release)")
    g.add_argument("--config", help="scene JSON file")
    s.add_argument("--seed", type=int, help="override the scene seed")
    s.add_argument("--out", required=True, help="output sequence directory")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("sample", help="build a sampling plan and measure every frame")
    s.add_argument("--input", required=True, help="cube sequence directory")
    s.add_argument("--compression", type=float, default=0.9)
    s.add_argument("--ordering", choices=ORDERINGS, default="max_variance")
    s.add_argument("--training", default="0-24", help="training frames FIRST-LAST for max_variance")
    s.add_argument("--seed", type=int, default=0, help="seed for the random ordering")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("reconstruct", help="reconstruct cubes from measurements")
    s.add_argument("--plan", required=True)
    s.add_argument("--measurements", required=True, help="HSM1 file or directory of frame_*.hsm")
    s.add_argument("--method", choices=METHODS, default="l1")
    s.add_argument("--shape", type=int, nargs=2, metavar=("N1", "N2"))
    s.add_argument("--config", help="JSON whose 'solver' object sets solver parameters")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("detect", help="ACE and bulk coherence maps for a cube sequence")
    s.add_argument("--input", required=True)
    s.add_argument("--signature", required=True, help="signature CSV, one value per band")
    s.add_argument("--background", default="0-24", help="background frames FIRST-LAST")
    s.add_argument("--centering", choices=CENTERING, default="pixel")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("threshold", help="threshold from background detection maps")
    s.add_argument("--maps", required=True, help="directory of frame_*.csv maps")
    s.add_argument("--background", default="0-24")
    s.add_argument("--alpha", type=float, default=99.0)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--out", required=True, help="threshold JSON file")
    s.set_defaults(func=cmd_threshold)

    s = sub.add_parser("compare", help="per-frame counts for raw and reconstructed maps")
    s.add_argument("--raw", required=True)
    s.add_argument("--recon", required=True)
    s.add_argument("--raw-threshold", required=True)
    s.add_argument("--recon-threshold", required=True)
    s.add_argument("--persist", action="store_true", help="apply the persistence filter (bulk maps)")
    s.add_argument("--out", help="CSV file (default: stdout)")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="counts over the threshold sweep")
    s.add_argument("--maps", required=True)
    s.add_argument("--threshold", required=True)
    s.add_argument("--persist", action="store_true")
    s.add_argument("--out", help="CSV file (default: stdout)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("run", help="full pipeline from an experiment config")
    s.add_argument("--config", help="experiment JSON (default: release preset)")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--workers", type=int, help="parallel frame workers")
    s.add_argument("--formats", default="csv,svg")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (HyperCSError, ValueError, OSError) as exc:
        print(f"hypercs {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"hypercs {args.command}: internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
