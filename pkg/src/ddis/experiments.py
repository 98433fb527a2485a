"""Experiment drivers behind the command-line interface.

Every repeat derives its own seeds from ``(config.seed, repeat)``, so results
do not depend on execution order and the same seed gives the same ground
truth, prior and observations for every sampler (paired comparisons).
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import SAMPLERS, ConfigError, ExperimentConfig
from .errors import DDISError
from .fields import Field, GridSpec, write_ddf1
from .metrics import rel_l2, spectral_error
from .mixture import MixtureScoreModel
from .operators import OperatorHandle, PairedDataset, exact_operator, fit_spectral_surrogate
from .random_fields import ObservationSet, make_rng, observe, sample_grf, sample_mask, spawn_seed
from .samplers import SampleResult, run_ddis_daps, run_decoupled_dps, run_dps_joint, run_fundaps

__all__ = [
    "ProblemInstance",
    "RepeatResult",
    "RunSummary",
    "make_instance",
    "run_repeat",
    "run_experiment",
    "cmd_prior_sample",
    "cmd_invert",
    "cmd_bench",
    "BenchGrid",
    "parse_bench_grid",
]

# stream tags for per-repeat seed derivation
_DATA, _SAMPLER = 0, 1


@dataclass
class ProblemInstance:
    grid: GridSpec
    centers: list  # prior coefficient fields (ground truth excluded)
    truth: Field
    solution: Field
    obs: ObservationSet
    operator: OperatorHandle  # exact solver for the task


def make_instance(config: ExperimentConfig, repeat: int) -> ProblemInstance:
    """Ground truth, prior centers and observations for one repeat.

    The centers are drawn before the ground truth from the same stream, so
    the truth is never one of the centers.
    """
    seed = spawn_seed(spawn_seed(config.seed, repeat), _DATA)
    rng = make_rng(seed)
    grid = GridSpec(config.resolution)
    spec = config.grf.spec()
    centers = [sample_grf(grid, spec, rng) for _ in range(config.prior_centers)]
    truth = sample_grf(grid, spec, rng)
    op = exact_operator(config.task_spec(), grid)
    u = op.apply(truth)
    idx = sample_mask(grid, config.obs_count, rng)
    obs = observe(u, idx, config.obs_noise, rng)
    return ProblemInstance(grid, centers, truth, u, obs, op)


def _paired(inst: ProblemInstance, config: ExperimentConfig):
    return [(a, inst.operator.apply(a)) for a in inst.centers[: config.n_paired()]]


def _channel_scale(pairs) -> float:
    """``rms(a) / rms(u)`` over the paired set: equalises the two joint blocks."""
    a = np.concatenate([p[0].flat() for p in pairs])
    u = np.concatenate([p[1].flat() for p in pairs])
    ru = np.sqrt(np.mean(u * u))
    return float(np.sqrt(np.mean(a * a)) / ru) if ru > 0 else 1.0


@dataclass
class RepeatResult:
    repeat: int
    ok: bool
    rel_l2: float = float("nan")
    E_s: float = float("nan")
    baseline_rel_l2: float = float("nan")
    seconds: float = float("nan")
    error: str = ""
    reconstruction: Field | None = None
    trace_csv: str = ""


def run_repeat(config: ExperimentConfig, repeat: int) -> RepeatResult:
    """Run one repeat without touching the filesystem."""
    t0 = time.perf_counter()
    try:
        inst = make_instance(config, repeat)
        rng = make_rng(spawn_seed(spawn_seed(config.seed, repeat), _SAMPLER))
        sched = config.schedule.build()
        cfg = config.sampler_config()
        prior = MixtureScoreModel.from_fields(inst.centers)
        if config.sampler in ("ddis-daps", "decoupled-dps"):
            if config.surrogate.use_exact:
                op = inst.operator
            else:
                cut = config.surrogate.mode_cutoff or config.resolution
                op = fit_spectral_surrogate(PairedDataset(_paired(inst, config)), cut,
                                            config.surrogate.lambda_phys, config.task_spec())
            run = run_ddis_daps if config.sampler == "ddis-daps" else run_decoupled_dps
            res: SampleResult = run(prior, op, inst.obs, sched, cfg, rng)
            a = res.a
        else:
            pairs = _paired(inst, config)
            s = _channel_scale(pairs)
            joint = MixtureScoreModel(
                np.stack([np.concatenate([a.flat(), s * u.flat()]) for a, u in pairs]), "joint", inst.grid)
            obs = inst.obs.scaled(s)
            if config.sampler == "fundaps":
                cfg = _replace_beta(cfg, s)
                res = run_fundaps(joint, obs, sched, cfg, rng)
            else:
                res = run_dps_joint(joint, obs, sched, cfg, rng)
            a = res.a
        recon = Field(inst.grid, a)
        baseline = Field(inst.grid, prior.centers.mean(axis=0))
        return RepeatResult(
            repeat=repeat,
            ok=True,
            rel_l2=rel_l2(recon, inst.truth),
            E_s=spectral_error(recon, inst.truth).E_s,
            baseline_rel_l2=rel_l2(baseline, inst.truth),
            seconds=time.perf_counter() - t0,
            reconstruction=recon,
            trace_csv=res.trace.to_csv(),
        )
    except (DDISError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return RepeatResult(repeat=repeat, ok=False, seconds=time.perf_counter() - t0,
                            error=f"{type(exc).__name__}: {exc}")


def _replace_beta(cfg, factor):
    from dataclasses import replace

    return replace(cfg, beta_y=cfg.beta_y * factor)


@dataclass
class RunSummary:
    config: ExperimentConfig
    repeats: list = field(default_factory=list)
    version: str = __version__

    @property
    def ok_repeats(self) -> list:
        return [r for r in self.repeats if r.ok]

    def _stat(self, name: str, fn) -> float:
        vals = [getattr(r, name) for r in self.ok_repeats]
        return float(fn(vals)) if vals else float("nan")

    def aggregate(self) -> dict:
        return {
            "rel_l2_mean": self._stat("rel_l2", np.mean),
            "rel_l2_std": self._stat("rel_l2", np.std),
            "E_s_mean": self._stat("E_s", np.mean),
            "E_s_std": self._stat("E_s", np.std),
            "baseline_rel_l2_mean": self._stat("baseline_rel_l2", np.mean),
            "seconds_per_sample": self._stat("seconds", np.mean),
            "n_ok": len(self.ok_repeats),
            "n_failed": len(self.repeats) - len(self.ok_repeats),
        }

    def to_dict(self, wall_clock: bool = True) -> dict:
        rows = []
        for r in self.repeats:
            row = {"repeat": r.repeat, "ok": r.ok, "rel_l2": r.rel_l2, "E_s": r.E_s,
                   "baseline_rel_l2": r.baseline_rel_l2, "error": r.error}
            if wall_clock:
                row["seconds"] = r.seconds
            rows.append(row)
        agg = self.aggregate()
        if not wall_clock:
            agg.pop("seconds_per_sample")
        return {"version": self.version, "config": self.config.to_dict(), "repeats": rows, "aggregate": agg}

    def repeats_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["repeat", "ok", "rel_l2", "E_s", "baseline_rel_l2", "seconds", "error"])
        for r in self.repeats:
            w.writerow([r.repeat, int(r.ok), repr(r.rel_l2), repr(r.E_s), repr(r.baseline_rel_l2), repr(r.seconds), r.error])
        return buf.getvalue()


def run_experiment(config: ExperimentConfig) -> RunSummary:
    summary = RunSummary(config)
    for r in range(config.repeats):
        summary.repeats.append(run_repeat(config, r))
    return summary


def _write_manifest(out: Path, config: ExperimentConfig, command: str, files: list) -> None:
    manifest = {"command": command, "version": __version__, "config": config.to_dict(), "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def cmd_prior_sample(config: ExperimentConfig, out_dir) -> list:
    """Write ``config.repeats`` GRF coefficient fields as DDF1 plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = GridSpec(config.resolution)
    spec = config.grf.spec()
    names = []
    for r in range(config.repeats):
        f = sample_grf(grid, spec, make_rng(spawn_seed(config.seed, r)))
        name = f"prior_{r:04d}.ddf"
        write_ddf1(out / name, f)
        names.append(name)
    _write_manifest(out, config, "prior-sample", names)
    return [out / n for n in names]


def cmd_invert(config: ExperimentConfig, out_dir) -> RunSummary:
    """Run all repeats and write per-repeat CSV, traces, fields and the summary JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = run_experiment(config)
    files = ["repeats.csv", "summary.json"]
    for r in summary.repeats:
        if r.ok:
            write_ddf1(out / f"recon_{r.repeat:04d}.ddf", r.reconstruction)
            (out / f"trace_{r.repeat:04d}.csv").write_text(r.trace_csv)
            files += [f"recon_{r.repeat:04d}.ddf", f"trace_{r.repeat:04d}.csv"]
    (out / "repeats.csv").write_text(summary.repeats_csv())
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    _write_manifest(out, config, "invert", files)
    return summary


# --- benchmark grids -------------------------------------------------------------


@dataclass(frozen=True)
class BenchGrid:
    base: ExperimentConfig
    paired_fractions: tuple = (1.0, 0.05, 0.01)
    samplers: tuple = ("ddis-daps", "fundaps")


_GRID_KEYS = ("base", "paired_fraction", "samplers")


def parse_bench_grid(text: str) -> BenchGrid:
    """``{"base": {...config...}, "paired_fraction": [...], "samplers": [...]}``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bench grid is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("bench grid must be a JSON object")
    for key in doc:
        if key not in _GRID_KEYS:
            raise ConfigError(f"unknown bench grid key {key!r}")
    base = ExperimentConfig.from_dict(doc.get("base", {}))
    fr = doc.get("paired_fraction", [1.0, 0.05, 0.01])
    if not isinstance(fr, list) or not fr:
        raise ConfigError("'paired_fraction' must be a nonempty list")
    for i, f in enumerate(fr):
        if isinstance(f, bool) or not isinstance(f, (int, float)) or not 0 < f <= 1:
            raise ConfigError(f"'paired_fraction[{i}]' must lie in (0, 1], got {f!r}")
    sm = doc.get("samplers", ["ddis-daps", "fundaps"])
    if not isinstance(sm, list) or not sm:
        raise ConfigError("'samplers' must be a nonempty list")
    for i, s in enumerate(sm):
        if s not in SAMPLERS:
            raise ConfigError(f"'samplers[{i}]' must be one of {SAMPLERS}, got {s!r}")
    return BenchGrid(base, tuple(float(f) for f in fr), tuple(sm))


def cmd_bench(grid_path, out_dir) -> list:
    """Sweep paired fraction x sampler with paired seeds; write ``bench.csv``."""
    grid = parse_bench_grid(Path(grid_path).read_text())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for frac in grid.paired_fractions:
        for sampler in grid.samplers:
            cfg = grid.base.replace(paired_fraction=frac, sampler=sampler)
            s = run_experiment(cfg)
            agg = s.aggregate()
            rows.append({"sampler": sampler, "paired_fraction": frac, **agg})
    buf = io.StringIO()
    cols = ["sampler", "paired_fraction", "rel_l2_mean", "rel_l2_std", "E_s_mean", "E_s_std",
            "baseline_rel_l2_mean", "seconds_per_sample", "n_ok", "n_failed"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    (out / "bench.csv").write_text(buf.getvalue())
    _write_manifest(out, grid.base, "bench", ["bench.csv"])
    (out / "grid.json").write_text(Path(grid_path).read_text())
    return rows
