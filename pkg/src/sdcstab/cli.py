"""Command-line orchestration: simulate, certify, benchmark.

Experiments are described by flags or a TOML config file (flags win),
run deterministically for a given seed, and persisted as CSV data files
plus JSON summaries.  Floats are written with 17 significant digits so
every emitted file re-parses to the exact in-memory values.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import certify as certify_mod
from . import feedback, matkit, modelfile, models, odeint

OUTPUT_ENV_VAR = "SDCSTAB_OUT"

_FLOAT_FMT = ".17g"


class ConfigError(Exception):
    """Invalid experiment configuration; the message names the field."""


class ModelUnknownError(ConfigError):
    """Requested model preset does not exist."""


def _fmt(value: float) -> str:
    return format(float(value), _FLOAT_FMT)


@dataclass
class ExperimentConfig:
    """Resolved experiment description.

    ``model`` is a preset name (oscillator, banks5d, chaffee) or a path
    to a declarative model file; Q/R specs are scalars (scaled
    identities), CSV matrix paths, or None for the preset defaults.
    """

    model: str = "banks5d"
    mode: str = "p-update"
    epsilon: Optional[float] = 0.9
    q_spec: Optional[str] = None
    r_spec: Optional[str] = None
    x0: Optional[List[float]] = None
    alpha: float = 0.4
    n_elements: int = 20
    rtol: float = 1e-6
    atol: float = 1e-6
    t_max: float = 3.0
    max_step: Optional[float] = None
    escape_norm: float = 1e9
    out: Optional[str] = None
    seed: int = 0
    norm: str = "euclid"
    rho_scan: bool = False
    omega: Optional[float] = None
    horizon: float = 12.0
    radius: float = 0.25
    refresh_per_eval: bool = False

    def validate(self) -> None:
        if self.mode not in ("open-loop", "sdre", "p-update"):
            raise ConfigError(f"mode: unknown value {self.mode!r}")
        if self.mode == "p-update":
            if self.epsilon is None or not 0.0 < self.epsilon < 1.0:
                raise ConfigError(
                    f"epsilon: p-update requires a value in (0, 1), "
                    f"got {self.epsilon!r}"
                )
        if self.t_max <= 0.0:
            raise ConfigError("tmax: must be positive")
        if self.rtol <= 0.0 or self.atol <= 0.0:
            raise ConfigError("rtol/atol: must be positive")
        if self.norm not in ("euclid", "mass"):
            raise ConfigError(f"norm: unknown value {self.norm!r}")


# Preset parameter sets for the built-in experiments.  The 5D benchmark
# uses R = 1e-3 I and Q = C^T C from the pinned initial state; the
# reaction-diffusion plant uses R = 0.1, Q = C^T C, and the sine bump
# initial profile with mass-scaled integrator tolerances.
BANKS5D_X0 = (-1.3, -1.4, -1.1, -2.0, 0.3)


def build_model(cfg: ExperimentConfig) -> models.SdcModel:
    name = cfg.model
    if name == "oscillator":
        return models.oscillator_model(cfg.alpha)
    if name == "banks5d":
        return models.banks5d_model()
    if name == "chaffee":
        return models.chaffee_infante_model(cfg.n_elements)
    path = Path(name)
    if path.suffix == ".toml" or path.exists():
        try:
            return modelfile.load_model_file(path)
        except FileNotFoundError as exc:
            raise ModelUnknownError(f"model: file {name!r} not found") from exc
        except (modelfile.ParseError,
                modelfile.DimensionMismatchError) as exc:
            raise ConfigError(f"model: {exc}") from exc
    raise ModelUnknownError(f"model: unknown preset {name!r}")


def _read_matrix_csv(path: str) -> np.ndarray:
    try:
        rows = []
        with open(path, newline="") as fh:
            for record in csv.reader(fh):
                if record:
                    rows.append([float(v) for v in record])
        return np.asarray(rows)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"matrix file {path!r}: {exc}") from exc


def _weight_matrix(spec: Optional[str], default: np.ndarray,
                   size: int, name: str) -> np.ndarray:
    if spec is None:
        return default
    try:
        scale = float(spec)
        return scale * np.eye(size)
    except ValueError:
        pass
    mat = _read_matrix_csv(spec)
    if mat.shape != (size, size):
        raise ConfigError(
            f"{name}: matrix must be {size}x{size}, got {mat.shape}"
        )
    return mat


def default_weights(model: models.SdcModel, cfg: ExperimentConfig):
    q_default = model.c.T @ model.c
    if model.name == "banks5d":
        r_default = 1e-3 * np.eye(model.p)
    elif model.name.startswith("chaffee"):
        r_default = 0.1 * np.eye(model.p)
    else:
        r_default = np.eye(model.p)
    q = _weight_matrix(cfg.q_spec, q_default, model.n, "Q-spec")
    r = _weight_matrix(cfg.r_spec, r_default, model.p, "R-spec") \
        if model.p else np.zeros((0, 0))
    return q, r


def default_x0(model: models.SdcModel, cfg: ExperimentConfig) -> np.ndarray:
    if cfg.x0 is not None:
        x0 = np.asarray(cfg.x0, dtype=float)
        if x0.shape != (model.n,):
            raise ConfigError(
                f"x0: expected {model.n} components, got {x0.size}"
            )
        return x0
    if model.name == "banks5d":
        return np.array(BANKS5D_X0)
    if model.name.startswith("chaffee"):
        return models.chaffee_initial_state(model)
    if model.name == "oscillator":
        return np.array([cfg.radius, 0.0])
    raise ConfigError("x0: required for model files")


def integrator_config(model: models.SdcModel,
                      cfg: ExperimentConfig) -> odeint.IntegratorConfig:
    icfg = odeint.IntegratorConfig(
        t_max=cfg.t_max, rtol=cfg.rtol, atol=cfg.atol,
        max_step=cfg.max_step, escape_norm=cfg.escape_norm,
    )
    if model.name.startswith("chaffee"):
        icfg = odeint.mass_weighted_tolerances(icfg, cfg.n_elements)
    return icfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    root = cfg.out or os.environ.get(OUTPUT_ENV_VAR) or "."
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_simulation(model: models.SdcModel, cfg: ExperimentConfig):
    """Integrate one run per the config and return its trajectory."""
    x0 = default_x0(model, cfg)
    icfg = integrator_config(model, cfg)
    if cfg.mode == "open-loop" or model.p == 0:
        rhs = models.closed_loop_rhs(model, None)
        return odeint.integrate(rhs, x0, icfg)
    q, r = default_weights(model, cfg)
    controller = feedback.init_controller(
        model, x0, q, r,
        epsilon=cfg.epsilon if cfg.mode == "p-update" else None,
        mode=cfg.mode,
    )
    return odeint.integrate_closed_loop(
        model, controller, x0, icfg, refresh_per_eval=cfg.refresh_per_eval
    )


def write_trajectory_csv(traj: odeint.Trajectory, n: int, path) -> None:
    """Columns: t, x_1..x_n, norm_x, switch_flag."""
    switch_set = {float(t) for t in traj.switch_times}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t"] + [f"x_{i + 1}" for i in range(n)] + ["norm_x", "switch_flag"]
        )
        for t, x in zip(traj.times, traj.states):
            writer.writerow(
                [_fmt(t)] + [_fmt(v) for v in x]
                + [_fmt(np.linalg.norm(x)), int(float(t) in switch_set)]
            )


def read_trajectory_csv(path):
    """Inverse of :func:`write_trajectory_csv` (times, states, flags)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n = len(header) - 3
        times, states, flags = [], [], []
        for record in reader:
            times.append(float(record[0]))
            states.append([float(v) for v in record[1:1 + n]])
            flags.append(int(record[-1]))
    return np.asarray(times), np.asarray(states), np.asarray(flags)


def write_switch_log(traj: odeint.Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["switch_index", "t"])
        for i, t in enumerate(traj.switch_times):
            writer.writerow([i, _fmt(t)])


def write_run_summary(traj: odeint.Trajectory, path) -> None:
    payload = {
        "fEvals": traj.f_evals,
        "fbSwitches": traj.fb_switches,
        "wallTime": traj.wall_time,
        "terminated": traj.terminated,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def cmd_simulate(cfg: ExperimentConfig) -> Path:
    model = build_model(cfg)
    traj = run_simulation(model, cfg)
    out = _out_dir(cfg)
    write_trajectory_csv(traj, model.n, out / "trajectory.csv")
    write_run_summary(traj, out / "summary.json")
    write_switch_log(traj, out / "switches.csv")
    return out


def ensemble_for(model: models.SdcModel, cfg: ExperimentConfig):
    """Initial-state grid for certification runs.

    Planar models get the three-ring grid with counts 12/8/4 whose radii
    scale proportionally from (0.25, 0.17, 0.08); higher-dimensional
    models get seeded concentric spheres with the same counts.
    """
    scale = cfg.radius / 0.25
    radii = [(0.25 * scale, 12), (0.17 * scale, 8), (0.08 * scale, 4)]
    if model.n == 2:
        return certify_mod.ring_grid_2d(radii)
    return certify_mod.sphere_grid(model.n, radii, seed=cfg.seed)


def cmd_certify(cfg: ExperimentConfig) -> Path:
    model = build_model(cfg)
    spec = certify_mod.EnsembleSpec(
        initial_states=ensemble_for(model, cfg),
        horizon=cfg.horizon,
        omega_target=cfg.omega,
        state_norm=cfg.norm,
        rho_scan=cfg.rho_scan,
    )
    icfg = odeint.IntegratorConfig(
        t_max=cfg.horizon, rtol=cfg.rtol, atol=cfg.atol,
        escape_norm=cfg.escape_norm,
    )
    factory = None
    if cfg.mode in ("sdre", "p-update") and model.p > 0:
        q, r = default_weights(model, cfg)

        def factory(x0):
            return feedback.init_controller(
                model, x0, q, r,
                epsilon=cfg.epsilon if cfg.mode == "p-update" else None,
                mode=cfg.mode,
            )

    cert = certify_mod.certify_ensemble(model, spec, icfg,
                                        controller_factory=factory)
    out = _out_dir(cfg)
    certify_mod.write_certificate_csv(cert, out / "certificate.csv")
    certify_mod.write_verdict_json(cert, out / "verdict.json")
    return out


@dataclass
class BenchmarkRow:
    scheme: str
    epsilon: Optional[float]
    n_elements: Optional[int]
    fb_switches: Optional[int]
    f_evals: Optional[int]
    wall_time: Optional[float]
    error: str = ""


_BENCH_FIELDS = ["scheme", "epsilon", "N", "fbSwitches", "fEvals",
                 "wallTimeSeconds", "error"]


def _bench_record(row: BenchmarkRow) -> list:
    return [
        row.scheme,
        "" if row.epsilon is None else _fmt(row.epsilon),
        "" if row.n_elements is None else row.n_elements,
        "" if row.fb_switches is None else row.fb_switches,
        "" if row.f_evals is None else row.f_evals,
        "" if row.wall_time is None else _fmt(row.wall_time),
        row.error,
    ]


def write_benchmark_csv(rows: Sequence[BenchmarkRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_BENCH_FIELDS)
        for row in rows:
            writer.writerow(_bench_record(row))


def _bench_record_pretty(row: BenchmarkRow) -> list:
    return [
        row.scheme,
        "" if row.epsilon is None else repr(float(row.epsilon)),
        "" if row.n_elements is None else str(row.n_elements),
        "" if row.fb_switches is None else str(row.fb_switches),
        "" if row.f_evals is None else str(row.f_evals),
        "" if row.wall_time is None else format(row.wall_time, ".4f"),
        row.error,
    ]


def render_benchmark_table(rows: Sequence[BenchmarkRow]) -> str:
    table = [_BENCH_FIELDS] + [
        _bench_record_pretty(row) for row in rows
    ]
    widths = [max(len(r[i]) for r in table) for i in range(len(_BENCH_FIELDS))]
    lines = []
    for i, record in enumerate(table):
        lines.append("  ".join(v.ljust(w) for v, w in zip(record, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_benchmark(cfg: ExperimentConfig, eps_list: Sequence[float],
                  n_list: Sequence[int]) -> tuple:
    """Run the (scheme, epsilon, N) cross product and persist the table.

    One sdre row plus one p-update row per epsilon, repeated for every
    requested mesh size (a single None entry means the model's fixed
    size).  Per-row failures are captured in the error column and flush
    with the partial results.
    """
    sizes: List[Optional[int]] = list(n_list) if n_list else [None]
    rows: List[BenchmarkRow] = []
    failed = False
    for n_el in sizes:
        run_cfg_base = _copy_config(cfg)
        if n_el is not None:
            run_cfg_base.n_elements = int(n_el)
        schemes = [("sdre", None)] + [("p-update", e) for e in eps_list]
        for scheme, eps in schemes:
            run_cfg = _copy_config(run_cfg_base)
            run_cfg.mode = scheme
            run_cfg.epsilon = eps
            try:
                model = build_model(run_cfg)
                start = time.perf_counter()
                traj = run_simulation(model, run_cfg)
                elapsed = time.perf_counter() - start
                rows.append(BenchmarkRow(
                    scheme=scheme, epsilon=eps, n_elements=n_el,
                    fb_switches=traj.fb_switches, f_evals=traj.f_evals,
                    wall_time=elapsed,
                ))
            except Exception as exc:  # per-row capture, partial flush
                failed = True
                rows.append(BenchmarkRow(
                    scheme=scheme, epsilon=eps, n_elements=n_el,
                    fb_switches=None, f_evals=None, wall_time=None,
                    error=f"{type(exc).__name__}: {exc}",
                ))
    out = _out_dir(cfg)
    write_benchmark_csv(rows, out / "benchmark.csv")
    (out / "benchmark.txt").write_text(render_benchmark_table(rows))
    return rows, failed


def _copy_config(cfg: ExperimentConfig) -> ExperimentConfig:
    import copy

    return copy.copy(cfg)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sdcstab",
                     description="SDC stabilization and certificates")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--model", help="preset name or model file")
        p.add_argument("--mode", choices=["open-loop", "sdre", "p-update"])
        p.add_argument("--eps", type=float, dest="epsilon",
                       help="p-update reset threshold in (0, 1)")
        p.add_argument("--alpha", type=float, help="oscillator parameter")
        p.add_argument("--N", type=int, dest="n_elements",
                       help="finite-element count")
        p.add_argument("--rtol", type=float)
        p.add_argument("--atol", type=float)
        p.add_argument("--tmax", type=float, dest="t_max")
        p.add_argument("--x0", help="comma-separated initial state")
        p.add_argument("--q", dest="q_spec",
                       help="Q: scalar (times identity) or CSV matrix file")
        p.add_argument("--r", dest="r_spec",
                       help="R: scalar (times identity) or CSV matrix file")
        p.add_argument("--out", help="output directory "
                                     f"(default ${OUTPUT_ENV_VAR} or .)")
        p.add_argument("--seed", type=int)
        p.add_argument("--norm", choices=["euclid", "mass"])

    sim = sub.add_parser("simulate", help="integrate one run")
    common(sim)

    cert = sub.add_parser("certify", help="ensemble stability certificate")
    common(cert)
    cert.add_argument("--radius", type=float,
                      help="outer radius of the initial-state grid")
    cert.add_argument("--omega", type=float,
                      help="target pointwise decay rate")
    cert.add_argument("--horizon", type=float, help="certificate horizon")
    cert.add_argument("--rho-scan", action="store_true", dest="rho_scan",
                      default=None)

    bench = sub.add_parser("benchmark", help="scheme/epsilon/N cross product")
    common(bench)
    bench.add_argument("--eps-list", type=float, nargs="*", default=None,
                       help="p-update thresholds (empty: sdre row only)")
    bench.add_argument("--N-list", type=int, nargs="*", default=None,
                       dest="n_list", help="mesh sizes for FEM models")
    return parser


_CONFIG_KEYS = {
    "model", "mode", "epsilon", "q_spec", "r_spec", "x0", "alpha",
    "n_elements", "rtol", "atol", "t_max", "max_step", "escape_norm",
    "out", "seed", "norm", "rho_scan", "omega", "horizon", "radius",
    "refresh_per_eval", "eps_list", "n_list",
}


def _load_config_file(path: str) -> dict:
    import sys as _sys

    if _sys.version_info >= (3, 11):
        import tomllib as toml
    else:
        import tomli as toml
    try:
        with open(path, "rb") as fh:
            doc = toml.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config: file {path!r} not found") from exc
    except toml.TOMLDecodeError as exc:
        raise ConfigError(f"config: {exc}") from exc
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    return doc


def resolve_config(args: argparse.Namespace) -> tuple:
    """Merge defaults, config file, and flags into an ExperimentConfig."""
    cfg = ExperimentConfig()
    file_doc = {}
    if getattr(args, "config", None):
        file_doc = _load_config_file(args.config)
    for key, value in file_doc.items():
        if key in ("eps_list", "n_list"):
            continue
        setattr(cfg, key, value)
    for key in vars(args):
        if key in ("command", "config", "eps_list", "n_list"):
            continue
        value = getattr(args, key)
        if value is not None:
            if key == "x0":
                try:
                    value = [float(v) for v in str(value).split(",")]
                except ValueError as exc:
                    raise ConfigError(f"x0: {exc}") from exc
            setattr(cfg, key, value)
    eps_list = getattr(args, "eps_list", None)
    if eps_list is None:
        eps_list = file_doc.get("eps_list", [])
    n_list = getattr(args, "n_list", None)
    if n_list is None:
        n_list = file_doc.get("n_list", [])
    cfg.validate()
    return cfg, list(eps_list or []), list(n_list or [])


_NUMERICAL_ERRORS = (
    matkit.MatkitError,
    feedback.FeedbackError,
    certify_mod.CertifyError,
    odeint.StepUnderflowError,
    models.ModelError,
    np.linalg.LinAlgError,
)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg, eps_list, n_list = resolve_config(args)
        if args.command == "simulate":
            out = cmd_simulate(cfg)
            print(f"simulate: wrote {out / 'trajectory.csv'}")
            return 0
        if args.command == "certify":
            out = cmd_certify(cfg)
            with open(out / "verdict.json") as fh:
                verdict = json.load(fh)["verdict"]
            print(f"certify: verdict={verdict}, wrote {out / 'certificate.csv'}")
            return 0
        if args.command == "benchmark":
            rows, failed = cmd_benchmark(cfg, eps_list, n_list)
            print(render_benchmark_table(rows), end="")
            return 2 if failed else 0
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
