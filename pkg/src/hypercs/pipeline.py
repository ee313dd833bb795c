"""End-to-end comparison of raw and compressively reconstructed detection.

For every frame the raw cube is sampled with one fixed plan and
reconstructed by each method.  Each data path (``raw`` and every method)
gets its own background model and thresholds, computed from that path's
background frames: ``beta_raw`` gates raw maps and ``beta_recon`` gates
reconstructed maps.  Pixels over ``m * T`` are then counted for every sweep
multiplier ``m``.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cube import CubeSequence, crop_fov, read_sequence
from .detection import (
    CENTERING,
    ace_map,
    bulk_coherence,
    estimate_background,
    persistence_filter,
    read_signature,
    write_map,
    write_signature,
)
from .errors import HyperCSError
from .sampling import ORDERINGS, build_plan, sample_cube, save_plan, write_measurements
from .solver import METHODS, SolverParams, reconstruct, write_result
from .synthdata import SceneSpec, generate_scene, preset_scenarios
from .threshold import SWEEP_MULTIPLIERS, compute_threshold, count_over

__all__ = [
    "CSV_HEADER",
    "ExperimentConfig",
    "ComparisonReport",
    "run_pipeline",
    "emit_report",
    "report_csv",
    "worker_count",
]

CSV_HEADER = ("frame", "method", "statistic", "multiplier", "threshold", "count_raw", "count_recon")
STAT_ORDER = ("ace", "bulk", "bulk_persist")


@dataclass
class ExperimentConfig:
    """Everything that determines one pipeline run.

    Data comes from exactly one of ``preset`` (a shipped scene name),
    ``scene`` (an inline :class:`SceneSpec` dict) or ``input`` (an HSC1
    sequence directory, which then also needs ``signature``).
    ``background_frames`` is an inclusive ``[first, last]`` range.
    """

    preset: Optional[str] = None
    scene: Optional[dict] = None
    input: Optional[str] = None
    signature: Optional[str] = None
    compression: float = 0.9
    ordering: str = "max_variance"
    methods: tuple = ("l1", "tv")
    statistics: tuple = STAT_ORDER
    alpha: float = 99.0
    beta_raw: float = 1.0
    beta_recon: float = 2.0
    background_frames: tuple = (0, 24)
    fov_origin: tuple = (0, 0)
    fov_size: Optional[tuple] = (64, 64)
    ace_centering: str = "pixel"
    solver: dict = field(default_factory=dict)
    seed: int = 0
    workers: int = 1
    persist: bool = True

    def __post_init__(self):
        sources = [x is not None for x in (self.preset, self.scene, self.input)]
        if sum(sources) != 1:
            raise HyperCSError("config needs exactly one of 'preset', 'scene' or 'input'")
        if self.input is not None and self.signature is None:
            raise HyperCSError("an 'input' sequence needs a 'signature' CSV")
        self.methods = tuple(self.methods)
        self.statistics = tuple(self.statistics)
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise HyperCSError(f"methods must be a non-empty subset of {METHODS}")
        if not self.statistics or any(s not in STAT_ORDER for s in self.statistics):
            raise HyperCSError(f"statistics must be a non-empty subset of {STAT_ORDER}")
        if not 0 < self.compression < 1:
            raise HyperCSError("compression must lie in (0, 1)")
        if self.ordering not in ORDERINGS:
            raise HyperCSError(f"ordering must be one of {ORDERINGS}")
        if self.ace_centering not in CENTERING:
            raise HyperCSError(f"ace_centering must be one of {CENTERING}")
        first, last = (int(x) for x in self.background_frames)
        if first < 0 or last < first:
            raise HyperCSError("background_frames must be an increasing [first, last] range")
        self.background_frames = (first, last)
        self.fov_origin = tuple(int(x) for x in self.fov_origin)
        self.fov_size = None if self.fov_size is None else tuple(int(x) for x in self.fov_size)
        SolverParams.from_dict(self.solver)

    @property
    def solver_params(self) -> SolverParams:
        return SolverParams.from_dict(self.solver)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("methods", "statistics", "background_frames", "fov_origin", "fov_size"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise HyperCSError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise HyperCSError(f"{path}: unreadable config ({exc})") from exc
        return cls.from_dict(d)

    def digest(self) -> str:
        # workers and persistence do not change results
        d = self.to_dict()
        d.pop("workers")
        d.pop("persist")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass
class ComparisonReport:
    """Counts keyed by ``(method, statistic, multiplier_index, frame)`` plus run metadata."""

    frames: int
    methods: tuple
    statistics: tuple
    multipliers: tuple
    counts_raw: dict
    counts_recon: dict
    thresholds: dict
    metadata: dict

    def rows(self):
        for frame in range(self.frames):
            for method in self.methods:
                for stat in self.statistics:
                    base = "bulk" if stat == "bulk_persist" else stat
                    T = self.thresholds[method][base]
                    for i, m in enumerate(self.multipliers):
                        key = (method, stat, i, frame)
                        yield (frame, method, stat, m, m * T, self.counts_raw[key], self.counts_recon[key])

    def series(self, method: str, statistic: str, multiplier: float = 1.0, which: str = "recon") -> list:
        i = self.multipliers.index(multiplier)
        src = self.counts_recon if which == "recon" else self.counts_raw
        return [src[(method, statistic, i, t)] for t in range(self.frames)]


def worker_count(config: ExperimentConfig) -> int:
    env = os.environ.get("HYPERCS_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise HyperCSError(f"HYPERCS_WORKERS must be an integer, got {env!r}")
    return max(1, int(config.workers))


def _load_data(config: ExperimentConfig):
    if config.input is not None:
        seq = read_sequence(config.input)
        sig = read_signature(config.signature)
        return seq, sig
    if config.preset is not None:
        presets = preset_scenarios()
        if config.preset not in presets:
            raise HyperCSError(f"unknown preset {config.preset!r}; choose from {sorted(presets)}")
        spec = presets[config.preset]
    else:
        spec = SceneSpec.from_dict(config.scene)
    seq, sig = generate_scene(spec)
    if config.signature is not None:
        sig = read_signature(config.signature)
    return seq, sig


def _crop(seq: CubeSequence, config: ExperimentConfig) -> CubeSequence:
    if config.fov_size is None:
        return seq
    n1, n2, _ = seq.shape
    if (n1, n2) == tuple(config.fov_size) and config.fov_origin == (0, 0):
        return seq
    return CubeSequence(tuple(crop_fov(f, config.fov_origin, config.fov_size) for f in seq))


def _reconstruct_frame(args):
    t, frame, plan, methods, params, shape = args
    try:
        meas = sample_cube(plan, frame)
    except (HyperCSError, ValueError) as exc:
        raise HyperCSError(f"frame {t}: sampling failed: {exc}") from exc
    recs = {}
    for m in methods:
        try:
            recs[m] = reconstruct(meas, plan, m, params, shape)
        except (HyperCSError, ValueError, np.linalg.LinAlgError) as exc:
            raise HyperCSError(f"frame {t}, method {m}: {exc}") from exc
    return meas, recs


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(config: ExperimentConfig, out_dir=None) -> ComparisonReport:
    """Run sample -> reconstruct -> detect -> threshold -> count for every frame."""
    out = Path(out_dir) if out_dir is not None else None
    persist = config.persist and out is not None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    seq, sig = _load_data(config)
    seq = _crop(seq, config)
    n1, n2, b = seq.shape
    if sig.b != b:
        raise HyperCSError(f"signature has {sig.b} bands, data has {b}")
    first, last = config.background_frames
    if last >= len(seq):
        raise HyperCSError(f"background frames {first}-{last} exceed the {len(seq)} available frames")
    bg_idx = list(range(first, last + 1))
    params = config.solver_params

    plan = build_plan(n1 * n2, config.compression, config.ordering,
                      training=seq[first:last + 1], seed=config.seed)
    artifacts = {}
    if persist:
        save_plan(plan, out / "plan.json")
        write_signature(sig, out / "signature.csv")
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")

    jobs = [(t, frame, plan, config.methods, params, (n1, n2)) for t, frame in enumerate(seq)]
    workers = worker_count(config)
    if workers > 1:
        # map() yields in submission order, so assembly does not depend on completion order
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_reconstruct_frame, jobs))
    else:
        results = [_reconstruct_frame(job) for job in jobs]

    paths = {"raw": list(seq.frames)}
    convergence = {}
    for method in config.methods:
        paths[method] = [recs[method].cube for _, recs in results]
        its = [recs[method].iterations for _, recs in results]
        convergence[method] = {
            "converged_frames": int(sum(recs[method].converged for _, recs in results)),
            "frames": len(results),
            "mean_iterations": float(np.mean(its)),
            "max_final_residual": float(max(recs[method].final_residual for _, recs in results)),
        }
    if persist:
        mdir = out / "measurements"
        mdir.mkdir(exist_ok=True)
        for t, (meas, recs) in enumerate(results):
            p = mdir / f"frame_{t:04d}.hsm"
            write_measurements(meas, p)
            artifacts[str(p.relative_to(out))] = _sha256(p)
            for method, rec in recs.items():
                rdir = out / "recon" / method
                rdir.mkdir(parents=True, exist_ok=True)
                p = rdir / f"frame_{t:04d}.hsc"
                write_result(rec, p)
                artifacts[str(p.relative_to(out))] = _sha256(p)
    del results

    betas = {"raw": config.beta_raw}
    betas.update({m: config.beta_recon for m in config.methods})
    maps = {}
    thresholds = {}
    background_info = {}
    for name, cubes in paths.items():
        bg = estimate_background(np.concatenate([cubes[i].matrix for i in bg_idx]))
        background_info[name] = {"ridge": bg.ridge, "sample_count": bg.sample_count}
        ace_maps = [ace_map(c, sig, bg, config.ace_centering, frame=t) for t, c in enumerate(cubes)]
        bulk_maps = [bulk_coherence(a) for a in ace_maps]
        maps[name] = {"ace": ace_maps, "bulk": bulk_maps}
        thresholds[name] = {
            stat: compute_threshold([maps[name][stat][i].values for i in bg_idx],
                                    config.alpha, betas[name], ids=bg_idx)
            for stat in ("ace", "bulk")
        }
    paths.clear()

    counts = {name: {} for name in maps}
    for name in maps:
        for stat in config.statistics:
            base = "bulk" if stat == "bulk_persist" else stat
            T = thresholds[name][base].T
            for i, m in enumerate(SWEEP_MULTIPLIERS):
                series = maps[name][base]
                if stat == "bulk_persist":
                    series = persistence_filter(series, m * T)
                for t, dm in enumerate(series):
                    counts[name][(stat, i, t)] = count_over(dm, m * T)
                if persist and m == 1.0:
                    _persist_maps(out, name, stat, series, artifacts)

    counts_raw, counts_recon = {}, {}
    for method in config.methods:
        for (stat, i, t), c in counts[method].items():
            counts_recon[(method, stat, i, t)] = c
            counts_raw[(method, stat, i, t)] = counts["raw"][(stat, i, t)]

    metadata = {
        "plan_sha256": plan.digest(),
        "config_sha256": config.digest(),
        "frames": len(seq),
        "shape": [n1, n2, b],
        "k": plan.k,
        "compression": plan.compression,
        "signature": sig.name,
        "background_frames": [first, last],
        "beta": betas,
        "thresholds": {name: {s: spec.to_dict() for s, spec in d.items()} for name, d in thresholds.items()},
        "background": background_info,
        "convergence": convergence,
        "artifacts": dict(sorted(artifacts.items())),
    }
    return ComparisonReport(
        frames=len(seq),
        methods=config.methods,
        statistics=config.statistics,
        multipliers=SWEEP_MULTIPLIERS,
        counts_raw=counts_raw,
        counts_recon=counts_recon,
        thresholds={m: {s: thresholds[m][s].T for s in ("ace", "bulk")} for m in config.methods},
        metadata=metadata,
    )


def _persist_maps(out: Path, path_name: str, stat: str, series, artifacts: dict) -> None:
    d = out / "maps" / path_name / stat
    d.mkdir(parents=True, exist_ok=True)
    for t, dm in enumerate(series):
        p = d / f"frame_{t:04d}.csv"
        write_map(dm, p)
        artifacts[str(p.relative_to(out))] = _sha256(p)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def report_csv(report: ComparisonReport) -> str:
    lines = [",".join(CSV_HEADER)]
    for row in report.rows():
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def emit_report(report: ComparisonReport, out_dir, formats=("csv", "svg")) -> list:
    """Write ``report.csv``, ``report.json`` and one SVG per (method, statistic)."""
    from .svg import series_chart

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise HyperCSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    try:
        if "csv" in formats:
            p = out / "report.csv"
            with open(p, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(report_csv(report))
            written.append(p)
            meta = dict(report.metadata)
            meta["thresholds_recon"] = report.thresholds
            p = out / "report.json"
            p.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
            written.append(p)
        if "svg" in formats:
            for method in report.methods:
                for stat in report.statistics:
                    sweep = {m: report.series(method, stat, m) for m in report.multipliers}
                    svg = series_chart(
                        title=f"{method} / {stat}: pixels over threshold",
                        raw=report.series(method, stat, 1.0, "raw"),
                        recon=report.series(method, stat, 1.0),
                        sweep=sweep,
                    )
                    p = out / f"{method}_{stat}.svg"
                    p.write_text(svg)
                    written.append(p)
    except OSError as exc:
        raise HyperCSError(f"cannot write report to {out}: {exc}") from exc
    return written
