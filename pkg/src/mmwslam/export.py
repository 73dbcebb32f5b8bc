"""Result export: CSV/JSON artifacts and their loaders.

All writers are deterministic: floats are serialized with ``repr`` (the
shortest round-trip representation of the exact binary value), JSON keys
are sorted, and rows follow the run/step/vehicle order of the inputs.  The
GM JSON codec is lossless: a mixture survives a dump/load cycle bit for
bit, so fusion can be replayed from exported sync events.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .fusion import AccumulatedFoV, BSMap
from .geometry import SourceType
from .gm import GaussianMixture
from .metrics import mae_rmse

STATE_FIELDS = ("x", "y", "z", "heading", "speed", "turn_rate", "bias")
HOLDERS = ("vehicle_1", "vehicle_2", "bs")


def _f(x) -> str:
    return repr(float(x))


def gm_to_obj(gm: GaussianMixture) -> dict:
    return {"w": gm.w.tolist(), "mean": gm.mean.tolist(),
            "cov": gm.cov.tolist()}


def gm_from_obj(obj: dict) -> GaussianMixture:
    if not obj["w"]:
        return GaussianMixture.empty()
    return GaussianMixture(np.array(obj["w"]), np.array(obj["mean"]),
                           np.array(obj["cov"]))


def fov_to_obj(fov: AccumulatedFoV) -> dict:
    return {"sp_centers_m": fov.sp_centers.tolist(),
            "radius_m": float(fov.radius), "va_universal": True}


def fov_from_obj(obj: dict) -> AccumulatedFoV:
    return AccumulatedFoV(np.array(obj["sp_centers_m"]).reshape(-1, 3),
                          obj["radius_m"])


def sync_event_to_obj(run_index: int, ev) -> dict:
    return {
        "run": run_index,
        "step": int(ev.step),
        "vehicle": int(ev.vehicle),
        "downlink": bool(ev.downlink),
        "fov": fov_to_obj(ev.fov),
        "uplink": {"va": gm_to_obj(ev.uplink[SourceType.VA]),
                   "sp": gm_to_obj(ev.uplink[SourceType.SP])},
        "fused": {"va": gm_to_obj(ev.fused.va),
                  "sp": gm_to_obj(ev.fused.sp)},
    }


def load_sync_events(path):
    """Sync events as (run, step, vehicle, downlink, uplink, fov, fused)."""
    with open(path) as fh:
        data = json.load(fh)
    out = []
    for obj in data:
        uplink = {SourceType.VA: gm_from_obj(obj["uplink"]["va"]),
                  SourceType.SP: gm_from_obj(obj["uplink"]["sp"])}
        fused = BSMap(va=gm_from_obj(obj["fused"]["va"]),
                      sp=gm_from_obj(obj["fused"]["sp"]))
        out.append((obj["run"], obj["step"], obj["vehicle"],
                    obj["downlink"], uplink, fov_from_obj(obj["fov"]),
                    fused))
    return out


def write_states_csv(results, path) -> None:
    """Per-step truth and estimates with per-component absolute errors."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["run", "k", "vehicle"]
                    + [f"truth_{f}" for f in STATE_FIELDS]
                    + [f"est_{f}" for f in STATE_FIELDS]
                    + ["err_location_m", "err_bias_m", "err_heading_rad"])
        for res in results:
            for ki, k in enumerate(res.steps):
                for n in range(res.truth.shape[1]):
                    tru = res.truth[k, n]
                    est = res.estimates[ki, n]
                    err_loc = float(np.linalg.norm(est[:3] - tru[:3]))
                    err_bias = abs(float(est[6] - tru[6]))
                    d = float(est[3] - tru[3])
                    err_head = abs(float(np.pi - np.mod(np.pi - d,
                                                        2 * np.pi)))
                    wr.writerow([res.run_index, int(k), n + 1]
                                + [_f(v) for v in tru]
                                + [_f(v) for v in est]
                                + [_f(err_loc), _f(err_bias), _f(err_head)])


def write_gospa_csv(results, path) -> None:
    """Per-step GOSPA series per source type and map holder."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["run", "k", "holder", "source_type", "gospa"])
        for res in results:
            for ki, k in enumerate(res.steps):
                for n in range(res.gospa_vehicle.shape[1]):
                    for ti, t in enumerate(("va", "sp")):
                        wr.writerow([res.run_index, int(k), HOLDERS[n], t,
                                     _f(res.gospa_vehicle[ki, n, ti])])
                for ti, t in enumerate(("va", "sp")):
                    wr.writerow([res.run_index, int(k), "bs", t,
                                 _f(res.gospa_bs[ki, ti])])


def write_sync_json(results, path) -> None:
    events = [sync_event_to_obj(res.run_index, ev)
              for res in results for ev in res.sync_events]
    with open(path, "w") as fh:
        json.dump(events, fh, sort_keys=True, indent=1)
        fh.write("\n")


def state_error_stats(results, k_start: int):
    """Pooled MAE/RMSE over runs, vehicles and steady-state steps."""
    ok = [r for r in results if not r.diverged]
    if not ok:
        raise ValueError("all runs diverged; no statistics available")
    est = np.stack([r.estimates for r in ok])        # (R, K, n, 7)
    tru = np.stack([r.truth[1:] for r in ok])
    est = np.moveaxis(est, 2, 1)                     # (R, n, K, 7)
    tru = np.moveaxis(tru, 2, 1)
    return mae_rmse(est, tru, ok[0].steps, k_start)


def write_metrics_csv(results, k_start: int, path) -> None:
    stats = state_error_stats(results, k_start)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["component", "mae", "rmse"])
        for comp in ("location", "bias", "heading"):
            wr.writerow([comp, _f(stats[comp].mae), _f(stats[comp].rmse)])


def write_plot_data(results, k_start: int, out_dir: Path) -> None:
    """Aggregated plot-data files: MAE/RMSE bars and mean GOSPA curves."""
    stats = state_error_stats(results, k_start)
    with open(out_dir / "plot_mae_bars.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["component", "mae", "rmse"])
        for comp in ("location", "bias", "heading"):
            wr.writerow([comp, _f(stats[comp].mae), _f(stats[comp].rmse)])

    ok = [r for r in results if not r.diverged]
    gv = np.stack([r.gospa_vehicle for r in ok])     # (R, K, n, 2)
    gb = np.stack([r.gospa_bs for r in ok])          # (R, K, 2)
    steps = ok[0].steps
    for ti, t in enumerate(("va", "sp")):
        with open(out_dir / f"plot_gospa_{t}.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "vehicle_1_mean", "vehicle_2_mean",
                         "bs_mean"])
            for ki, k in enumerate(steps):
                wr.writerow([int(k),
                             _f(np.mean(gv[:, ki, 0, ti])),
                             _f(np.mean(gv[:, ki, 1, ti])),
                             _f(np.mean(gb[:, ki, ti]))])


def write_summary_json(config_obj: dict, results, path) -> None:
    """Run summary: configuration echo and per-run divergence report."""
    summary = {
        "config": config_obj,
        "n_runs": len(results),
        "diverged_runs": [
            {"run": r.run_index, "at_step": r.diverged_at[0],
             "vehicle": r.diverged_at[1]}
            for r in results if r.diverged],
    }
    with open(path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
