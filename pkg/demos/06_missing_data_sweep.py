"""Missing-ratio robustness sweep, scripted.

Runs the benchmark protocol on a reduced configuration: train the estimator
once at a 5% training missing ratio, then evaluate it and the classical WLS
baseline while the evaluation missing ratio climbs to 40%. The learned model
keeps producing estimates where WLS goes rank deficient.

Writes its report (CSVs + SVGs) under runs/demo_sweep/.
"""

from gridtwin import ExperimentConfig, run_sweep
from gridtwin.metrics import summarize

config = ExperimentConfig.from_dict({
    "feeder": "feeder_8bus",
    "steps": 260,
    "profile": {"seed": 11, "day_steps": 96, "amplitude": 0.5, "jitter": 0.1},
    "noise_seed": 23,
    "schema": {"power_sigma": 0.01, "vmag_sigma": 0.001, "vang_sigma": 0.001,
               "train_alpha": 0.05,
               "vmag_buses": ["b2", "b4", "b6", "b8"],
               "vang_nodes": ["b5:a", "b5:b", "b5:c", "b8:a"]},
    "model": {"d": 32, "d_ff": 64, "blocks": 2, "heads": 4, "groups": 2,
              "window": 8, "lr": 0.001, "epochs": 25, "seed": 7,
              "optimizer": "adam"},
    "evaluation": {"alphas": [0.0, 0.2, 0.4], "seeds": [0, 1, 2],
                   "wls_failure_seeds": 10, "timeseries_node": "b5:a"},
    "output_dir": "runs/demo_sweep",
})

rows = run_sweep(config, jobs=1, progress=print)

print("\nmean error vs missing ratio:")
print(f"{'method':10s} {'alpha':>6s} {'mae_mag [p.u.]':>15s} {'mae_ang [rad]':>14s}")
summary = {(r['method'], r['alpha'], r['metric']): r['mean'] for r in summarize(rows)}
for method in ("dt", "ablation", "wls"):
    for alpha in (0.0, 0.2, 0.4):
        mag = summary.get((method, alpha, "mae_mag"))
        ang = summary.get((method, alpha, "mae_ang"))
        mag_s = f"{mag:15.6f}" if mag is not None else f"{'infeasible':>15s}"
        ang_s = f"{ang:14.6f}" if ang is not None else f"{'':14s}"
        print(f"{method:10s} {alpha:6.1f} {mag_s} {ang_s}")

print("\nWLS rank-deficiency fraction (flat-start probe):")
for alpha in (0.0, 0.2, 0.4):
    frac = summary.get(("wls", alpha, "rank_deficient_fraction"))
    print(f"  alpha={alpha:.1f}: {frac:.2f}")
print("\nreport files in runs/demo_sweep/")
