"""Command-line simulator: configure, run, export.

Configuration is a flat YAML key-value file whose keys carry their units
(``r_fov_m``, ``sigma_heading_rad``, ...).  Every key can also be supplied
through the environment as ``MMWSLAM_<KEY>`` (upper-cased), and the most
common ones as command-line flags.  Precedence: flags > environment >
config file > defaults.

``mmwslam run`` executes the Monte-Carlo experiment for one mode and
writes the artifacts into the output directory:

    states.csv        per-step truth/estimate/error rows
    gospa.csv         per-step map GOSPA series per holder and source type
    metrics.csv       steady-state MAE/RMSE of the vehicle state
    sync_events.json  uplinked maps, FoVs and fused BS maps per sync
    plot_*.csv        aggregated plot data (error bars, GOSPA curves)
    summary.json      configuration echo and divergence report

``mmwslam validate`` checks a configuration without running.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import export
from .metrics import GospaParams
from .motion import ProcessNoiseSpec
from .sim import Mode, Scenario, run_monte_carlo

ENV_PREFIX = "MMWSLAM_"

# config key -> Scenario field (plain scalars and arrays)
SCENARIO_KEYS = {
    "delta_s": "delta",
    "n_steps": "n_steps",
    "bs_position_m": "bs_position",
    "va_positions_m": "va_positions",
    "sp_positions_xy_m": "sp_positions_xy",
    "sp_height_range_m": "sp_height_range",
    "vehicle_init_states": "vehicle_init",
    "init_std_xy_m": "init_std_xy",
    "init_std_heading_rad": "init_std_heading",
    "init_std_bias_m": "init_std_bias",
    "meas_var_range_m2": "meas_var_range",
    "meas_var_angle_rad2": "meas_var_angle",
    "phd_noise_factor": "phd_noise_factor",
    "p_detect": "p_detect",
    "r_fov_m": "fov_range",
    "clutter_rate": "clutter_rate",
    "max_range_m": "max_range",
    "robust_pd": "robust_pd",
    "birth_weight": "birth_weight",
    "trunc_threshold": "trunc_threshold",
    "merge_threshold_maha2": "merge_threshold",
    "max_components": "max_components",
    "detect_threshold_va": "detect_threshold_va",
    "detect_threshold_sp": "detect_threshold_sp",
    "sync_period_steps": "sync_period",
    "sync_offsets_steps": "sync_offsets",
    "fusion_gate_maha2": "fusion_gate",
    "fov_detect_threshold": "fov_detect_threshold",
    "steady_state_step": "steady_state_step",
}
NOISE_KEYS = {
    "sigma_x_m": "sigma_x",
    "sigma_y_m": "sigma_y",
    "sigma_heading_rad": "sigma_heading",
    "sigma_bias_m": "sigma_bias",
}
GOSPA_KEYS = {
    "gospa_cutoff_m": "cutoff",
    "gospa_alpha": "alpha",
    "gospa_power": "power",
}
RUN_KEYS = ("mode", "master_seed", "n_runs_mc", "particle_count",
            "output_dir", "export_formats")
ALL_KEYS = (set(SCENARIO_KEYS) | set(NOISE_KEYS) | set(GOSPA_KEYS)
            | set(RUN_KEYS))

RUN_DEFAULTS = {
    "mode": Mode.FUSION_ULDL.value,
    "n_runs_mc": 20,
    "particle_count": 2000,
    "export_formats": ["csv", "json"],
}


class ConfigError(ValueError):
    pass


def load_config(path=None) -> dict:
    """Config dict from file plus MMWSLAM_* environment overrides."""
    cfg = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must be a flat key-value "
                              "mapping")
        cfg.update(data)
    for key in ALL_KEYS:
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            cfg[key] = yaml.safe_load(env)
    return cfg


def validate_config(cfg: dict) -> list:
    """List of human-readable violations; empty means valid."""
    bad = []
    for key in cfg:
        if key not in ALL_KEYS:
            bad.append(f"unknown key: {key}")

    def check(key, pred, msg):
        if key in cfg:
            try:
                if not pred(cfg[key]):
                    bad.append(f"{key}: {msg} (got {cfg[key]!r})")
            except (TypeError, ValueError):
                bad.append(f"{key}: {msg} (got {cfg[key]!r})")

    positive = (lambda v: float(v) > 0, "must be positive")
    nonneg = (lambda v: float(v) >= 0, "must be non-negative")
    check("delta_s", *positive)
    check("n_steps", lambda v: int(v) >= 1, "must be >= 1")
    for key in NOISE_KEYS:
        check(key, *nonneg)
    for key in ("init_std_xy_m", "init_std_heading_rad", "init_std_bias_m"):
        check(key, *nonneg)
    for key in ("meas_var_range_m2", "meas_var_angle_rad2",
                "phd_noise_factor", "r_fov_m", "max_range_m",
                "birth_weight", "merge_threshold_maha2",
                "detect_threshold_va", "detect_threshold_sp",
                "fusion_gate_maha2", "gospa_cutoff_m"):
        check(key, *positive)
    check("trunc_threshold", *nonneg)
    check("clutter_rate", *nonneg)
    check("p_detect", lambda v: 0.0 <= float(v) <= 1.0, "must be in [0, 1]")
    check("fov_detect_threshold", lambda v: 0.0 < float(v) <= 1.0,
          "must be in (0, 1]")
    check("max_components", lambda v: int(v) >= 1, "must be >= 1")
    check("sync_period_steps", lambda v: int(v) >= 1, "must be >= 1")
    check("gospa_alpha", lambda v: 0.0 < float(v) <= 2.0,
          "must be in (0, 2]")
    check("gospa_power", lambda v: float(v) >= 1.0, "must be >= 1")
    check("mode", lambda v: v in [m.value for m in Mode],
          "must be one of " + ", ".join(m.value for m in Mode))
    check("n_runs_mc", lambda v: int(v) >= 1, "must be >= 1")
    check("particle_count", lambda v: int(v) >= 1, "must be >= 1")
    check("master_seed", lambda v: int(v) >= 0, "must be a non-negative "
                                                "integer")
    check("export_formats",
          lambda v: set(v) <= {"csv", "json"} and len(v) > 0,
          "must be a non-empty subset of [csv, json]")

    n_steps = int(cfg.get("n_steps", Scenario().n_steps))
    check("sync_offsets_steps",
          lambda v: all(1 <= int(o) <= n_steps for o in v),
          f"offsets must lie in [1, {n_steps}]")

    # measurement covariance must be PD, which for the diagonal model just
    # means positive variances (covered above); the initial covariance of
    # the prior likewise reduces to the std checks.
    return bad


def build_scenario(cfg: dict) -> Scenario:
    kw = {}
    for key, field_name in SCENARIO_KEYS.items():
        if key in cfg:
            default = getattr(Scenario(), field_name)
            v = cfg[key]
            if isinstance(default, np.ndarray):
                v = np.asarray(v, dtype=float)
            elif isinstance(default, tuple):
                v = tuple(v)
            elif isinstance(default, bool):
                v = bool(v)
            elif isinstance(default, int):
                v = int(v)
            elif isinstance(default, float):
                v = float(v)
            kw[field_name] = v
    if any(k in cfg for k in NOISE_KEYS):
        noise_kw = {f: float(cfg[k]) for k, f in NOISE_KEYS.items()
                    if k in cfg}
        kw["noise"] = dataclasses.replace(ProcessNoiseSpec(), **noise_kw)
    if any(k in cfg for k in GOSPA_KEYS):
        gospa_kw = {f: float(cfg[k]) for k, f in GOSPA_KEYS.items()
                    if k in cfg}
        kw["gospa"] = dataclasses.replace(GospaParams(), **gospa_kw)
    return Scenario().with_overrides(**kw)


def _config_echo(cfg: dict, scenario: Scenario) -> dict:
    # output_dir is where the artifacts land, not part of the experiment:
    # leaving it out keeps exports byte-identical across target directories.
    echo = {k: v for k, v in cfg.items() if k != "output_dir"}
    echo["resolved_mode"] = cfg["mode"]
    echo["resolved_particle_count"] = cfg["particle_count"]
    echo["resolved_n_runs"] = cfg["n_runs_mc"]
    echo["resolved_master_seed"] = cfg["master_seed"]
    echo["resolved_n_steps"] = scenario.n_steps
    return yaml.safe_load(yaml.safe_dump(echo))


def run_command(cfg: dict) -> int:
    violations = validate_config(cfg)
    if "master_seed" not in cfg:
        violations.append("master_seed: required for reproducible runs")
    if violations:
        for v in violations:
            print(f"config error: {v}", file=sys.stderr)
        return 2

    for key, value in RUN_DEFAULTS.items():
        cfg.setdefault(key, value)
    scenario = build_scenario(cfg)
    mode = Mode(cfg["mode"])
    out_dir = Path(cfg.get("output_dir", "mmwslam-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    formats = set(cfg["export_formats"])

    t0 = time.time()
    results = run_monte_carlo(scenario, mode, int(cfg["n_runs_mc"]),
                              int(cfg["master_seed"]),
                              int(cfg["particle_count"]))
    runtime = time.time() - t0

    diverged = [r for r in results if r.diverged]
    if "csv" in formats:
        export.write_states_csv(results, out_dir / "states.csv")
        export.write_gospa_csv(results, out_dir / "gospa.csv")
        if len(diverged) < len(results):
            export.write_metrics_csv(results, scenario.steady_state_step,
                                     out_dir / "metrics.csv")
            export.write_plot_data(results, scenario.steady_state_step,
                                   out_dir)
    if "json" in formats:
        export.write_sync_json(results, out_dir / "sync_events.json")
        export.write_summary_json(_config_echo(cfg, scenario), results,
                                  out_dir / "summary.json")

    print(f"{len(results)} runs ({mode.value}), "
          f"{int(cfg['particle_count'])} particles, "
          f"seed {int(cfg['master_seed'])}: done in {runtime:.1f} s")
    for r in diverged:
        print(f"warning: run {r.run_index} diverged at step "
              f"{r.diverged_at[0]} (vehicle {r.diverged_at[1] + 1}); "
              "excluded from aggregate metrics", file=sys.stderr)
    print(f"artifacts written to {out_dir}")
    return 0


def validate_command(cfg: dict) -> int:
    violations = validate_config(cfg)
    if not violations:
        print("configuration ok")
        return 0
    for v in violations:
        print(f"violation: {v}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmwslam",
        description="Cooperative mmWave positioning and mapping simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="YAML key-value config file")
        p.add_argument("--mode", type=str, default=None,
                       choices=[m.value for m in Mode])
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (required to run)")
        p.add_argument("--nmc", type=int, default=None,
                       help="number of Monte-Carlo runs")
        p.add_argument("--particles", type=int, default=None)
        p.add_argument("--out", type=str, default=None,
                       help="output directory")
        p.add_argument("--format", type=str, default=None,
                       choices=["csv", "json"], action="append",
                       help="restrict export formats (repeatable)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (OSError, yaml.YAMLError, ConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    if args.mode is not None:
        cfg["mode"] = args.mode
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.nmc is not None:
        cfg["n_runs_mc"] = args.nmc
    if args.particles is not None:
        cfg["particle_count"] = args.particles
    if args.out is not None:
        cfg["output_dir"] = args.out
    if args.format:
        cfg["export_formats"] = list(dict.fromkeys(args.format))

    if args.command == "validate":
        return validate_command(cfg)
    return run_command(cfg)


if __name__ == "__main__":
    sys.exit(main())
