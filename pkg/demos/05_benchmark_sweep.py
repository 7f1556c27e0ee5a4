"""A scaled-down Monte Carlo sweep with the library API, plus optional plots.

Same machinery as the canyonloc-bench CLI, but few enough runs to finish in
well under a minute. Pass --plot to render the four figure analogues with
matplotlib (not required for anything else).

Run:  python demos/05_benchmark_sweep.py [--plot]
"""

import sys

from canyonloc import ExperimentConfig, run_sweep, write_csvs

config = ExperimentConfig(
    tx_power_sweep=(-40.0, -30.0, -20.0, -10.0, 0.0, 10.0),
    runs=60,
    master_seed=1,
    workers=2,
)
result = run_sweep(config)

print(f"{len(result.records)} trials, {result.solves} solver runs, "
      f"{result.failures} failures\n")

print(f"{'power':>6} {'assoc(min)':>10} {'FA':>7} {'MD':>7} {'RMSE':>8} {'all_paths':>10} {'oracle':>8}")
t = 11.34
for p in config.tx_power_sweep:
    assoc = min(result.association_rate[p].values())
    fa = result.fa[(p, t)][0]
    md = result.md[(p, t)][0]
    rmse = result.rmse[(p, t)][0]
    ap = result.baseline_rmse[(p, "all_paths")][0]
    pf = result.baseline_rmse[(p, "perfect_inlier")][0]
    print(f"{p:>6.0f} {assoc:>10.3f} {fa:>7.3f} {md:>7.3f} {rmse:>8.3f} {ap:>10.3f} {pf:>8.3f}")

out = write_csvs(result, "demo_sweep_out")
print("\nCSV files:")
for p in out:
    print(f"  {p}")

if "--plot" in sys.argv:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    powers = list(config.tx_power_sweep)
    fig, axes = plt.subplots(2, 2, figsize=(11, 8))
    ax = axes[0, 0]
    for idx in sorted(result.sb_surface):
        ax.plot(powers, [result.association_rate[p][idx] for p in powers], marker="o",
                label=f"bounce path {idx}")
    ax.set_title("correct association rate")
    ax.set_ylim(0, 1.05)
    ax.legend()
    for ax, table, name in (
        (axes[0, 1], result.fa, "false alarm rate"),
        (axes[1, 0], result.md, "missed detection rate"),
        (axes[1, 1], result.rmse, "RMSE [m]"),
    ):
        for t in config.thresholds:
            ax.plot(powers, [table[(p, t)][0] for p in powers], marker="o", label=f"T={t}")
        ax.set_title(name)
        ax.set_xlabel("tx power [dBm]")
        ax.legend()
    for name in ("all_paths", "perfect_inlier"):
        axes[1, 1].plot(powers, [result.baseline_rmse[(p, name)][0] for p in powers],
                        linestyle="--", label=name)
    axes[1, 1].set_yscale("log")
    axes[1, 1].legend()
    fig.tight_layout()
    fig.savefig("demo_sweep_out/figures.png", dpi=130)
    print("  demo_sweep_out/figures.png")
