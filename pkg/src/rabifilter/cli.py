"""Command-line experiment runner.

``rabifilter ensemble --config run.cfg`` writes ensemble statistics;
``rabifilter trace --config run.cfg`` filters a single record at a fixed
``omega_true``. Configs are flat ``key = value`` files. Exit status is 0 on
success, 2 for configuration errors and 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .bloch import BlochState, SystemParams, build_grid, steady_state
from .filter import init_filter, run_filter, write_trace
from .metrics import ensemble_run, info_gain, posterior_variance, write_stats
from .operators import Scheme, SchemeConfig
from .trajectory import simulate_trajectory, write_record
from .utils import checkpoint_steps, n_steps_for

OUT_ENV = "RABIFILTER_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
# written by the manifest; accepted and ignored when a manifest is reused as config
MANIFEST_ONLY = {"command", "code_version", "wall_time_s"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scheme: str = "direct"
    gamma: float = 1.0
    omega_max: float = 10.0
    dt: float = 1e-3
    duration: float = 50.0
    n_records: int = 100
    n_grid: int = 201
    policy: str = "steady"
    seed: int = 0
    out_dir: str = "out"
    checkpoint_interval: float = 0.1
    epsilon: float | None = None
    phi: float | None = None
    mu_magnitude: float = 0.5
    keep_records: int = 0
    omega_true: float = 5.0

    def validate(self) -> "ExperimentConfig":
        try:
            Scheme.parse(self.scheme)
            SystemParams(self.gamma, self.omega_max)
            SchemeConfig.make(self.scheme, phi=self.phi, mu_magnitude=self.mu_magnitude)
            n_steps_for(self.duration, self.dt)
            if self.duration <= 0:
                raise ValueError("duration must be positive")
            n = n_steps_for(self.duration, self.dt)
            checkpoint_steps(n, self.dt, self.checkpoint_interval)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.n_grid < 3 or self.n_grid % 2 == 0:
            raise ConfigError(f"n_grid must be odd and >= 3, got {self.n_grid}")
        if self.n_records < 2:
            raise ConfigError("n_records must be at least 2")
        if self.policy not in ("steady", "ground"):
            raise ConfigError(f"policy must be 'steady' or 'ground', got {self.policy!r}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.keep_records < 0 or self.seed < 0:
            raise ConfigError("keep_records and seed must be non-negative")
        if abs(self.omega_true) >= self.omega_max:
            raise ConfigError("omega_true must lie inside (-omega_max, omega_max)")
        return self

    @property
    def params(self) -> SystemParams:
        return SystemParams(self.gamma, self.omega_max)

    @property
    def scheme_config(self) -> SchemeConfig:
        return SchemeConfig.make(self.scheme, phi=self.phi, mu_magnitude=self.mu_magnitude)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if v is None else (repr(v) if isinstance(v, float) else v)}")
        return "\n".join(lines) + "\n"


def _convert(name: str, raw: str, kind):
    if raw == "":
        if "None" in str(kind):
            return None
        raise ConfigError(f"{name}: empty value")
    try:
        if "int" in str(kind):
            return int(raw)
        if "float" in str(kind):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return raw


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` text; ``#`` starts a comment."""
    kinds = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in MANIFEST_ONLY:
            continue
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw, kinds[key])
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _code_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _write_manifest(path: Path, cfg: ExperimentConfig, command: str, wall: float) -> None:
    text = f"command = {command}\n" + cfg.to_text()
    text += f"code_version = {_code_version()}\nwall_time_s = {wall:.3f}\n"
    path.write_text(text)


def _record_table(stats, path: Path) -> None:
    lines = ["index,seed,omega_true,p_final,V_final,dI_final,n_clamped"]
    for s in stats.samples:
        lines.append(f"{s.index},{s.seed},{s.omega_true!r},{float(s.purity[-1])!r},"
                     f"{float(s.variance[-1])!r},{float(s.info_gain[-1])!r},{s.n_clamped}")
    path.write_text("\n".join(lines) + "\n")


def run_ensemble(cfg: ExperimentConfig, out: Path, threads: int | None) -> None:
    stats = ensemble_run(cfg.scheme_config, cfg.params, cfg.policy, cfg.n_records, cfg.duration,
                         cfg.dt, cfg.n_grid, cfg.seed, cfg.checkpoint_interval, cfg.epsilon,
                         threads, cfg.keep_records)
    write_stats(stats, out / "ensemble_stats.csv")
    _record_table(stats, out / "records.csv")
    for (rec, trace), s in zip(stats.kept, stats.samples):
        write_record(rec, out / f"record_{s.index:04d}.csv")
        write_trace(trace, out / f"filter_trace_{s.index:04d}.csv")


def run_trace(cfg: ExperimentConfig, out: Path) -> None:
    params, scheme = cfg.params, cfg.scheme_config
    start = steady_state(cfg.omega_true, params) if cfg.policy == "steady" else BlochState.ground()
    traj = simulate_trajectory(cfg.omega_true, start, scheme, cfg.duration, cfg.dt, cfg.seed,
                               params, cfg.checkpoint_interval)
    grid = build_grid(params, cfg.n_grid)
    fs = init_filter(grid, scheme, params, cfg.dt, cfg.policy, cfg.epsilon)
    _, trace = run_filter(fs, traj.record, None, cfg.checkpoint_interval)
    write_record(traj.record, out / "record.csv")
    write_trace(trace, out / "filter_trace.csv")
    var = posterior_variance(trace.weights, grid.points)
    gain = info_gain(trace.weights, grid)
    known_purity = 0.5 * (1 + np.sum(traj.states**2, axis=1))
    lines = ["time,known_x,known_y,known_z,known_purity,best_x,best_y,best_z,best_purity,V,dI"]
    for i in range(len(trace)):
        vals = [trace.times[i], *traj.states[i], known_purity[i], *trace.best[i],
                trace.best_purity[i], var[i], gain[i]]
        lines.append(",".join(repr(float(v)) for v in vals))
    (out / "known_trajectory.csv").write_text("\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rabifilter", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("ensemble", "run an ensemble and write averaged metrics"),
                            ("trace", "filter one record at a fixed omega_true")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="flat key = value config file")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        p.add_argument("--out", type=Path, help=f"output directory (overrides ${OUT_ENV} and the config)")
    return parser


def resolve_out(args, cfg: ExperimentConfig) -> Path:
    if args.out is not None:
        return args.out
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    return Path(cfg.out_dir)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.seed = args.seed
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = resolve_out(args, cfg)
        cfg.out_dir = str(out)
    except ConfigError as exc:
        print(f"rabifilter: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    staging = None
    try:
        out.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
        t0 = time.perf_counter()
        if args.command == "ensemble":
            run_ensemble(cfg, staging, args.threads)
        else:
            run_trace(cfg, staging)
        _write_manifest(staging / "manifest.txt", cfg, args.command, time.perf_counter() - t0)
        for f in sorted(staging.iterdir()):
            os.replace(f, out / f.name)
    except Exception as exc:
        print(f"rabifilter: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if staging is not None:
            shutil.rmtree(staging, ignore_errors=True)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
