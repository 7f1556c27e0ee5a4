"""One end-to-end localization trial: associate, classify, refine.

Multi-bounce paths masquerade as single-bounce hypotheses after association;
the consensus stage exposes them through their residual cost and the final
solve runs on the surviving inliers only.

Run:  python demos/04_ransac_localization.py [tx_power_dbm]
"""

import sys

import numpy as np

from canyonloc import (
    AssociationConfig,
    RadioConfig,
    RansacConfig,
    associate_all,
    default_scene,
    generate_paths,
    refine,
    residual_cost,
    run_ransac,
    synthesize,
    with_tx_power,
)

power = float(sys.argv[1]) if len(sys.argv) > 1 else -5.0
scene = default_scene()
ue_true = np.array([-15.0, -15.0, 0.0])
bias_true = 100e-9

paths = generate_paths(ue_true, scene)
radio = with_tx_power(RadioConfig(), power)
labeled = synthesize(paths, radio, bias_true, rng_seed=11)
measurements = [lm.measurement for lm in labeled]

hypotheses = associate_all(measurements, scene, AssociationConfig(rng_seed=12))
winner = run_ransac(hypotheses, measurements, scene, RansacConfig(), seed=13)

print(f"transmit power {power:+.0f} dBm, true user {ue_true}, true bias {bias_true * 1e9:.1f} ns\n")
print("winning candidate state:", np.round(winner.position, 3),
      f"bias {winner.clock_bias * 1e9:.2f} ns")
print(f"consensus inliers: {sorted(winner.inliers)}\n")

print(f"{'idx':>3} {'truth':<16} {'hyp':>4} {'cost f':>12} {'classified':<10}")
for h, lm in zip(hypotheses, labeled):
    if not h.assigned:
        print(f"{h.measurement_index:>3} {lm.truth.kind:<16} {'-':>4} {'-':>12} rejected")
        continue
    f = residual_cost(lm.measurement, winner.position, winner.clock_bias, h.origin, scene)
    label = "inlier" if h.measurement_index in winner.inliers else "outlier"
    print(f"{h.measurement_index:>3} {lm.truth.kind:<16} {h.origin:>4} {f:>12.4g} {label:<10}")

refined = refine(winner, hypotheses, measurements, scene)
err = np.linalg.norm(refined.position - ue_true)
print(f"\nrefined estimate: {np.round(refined.position, 4)}  "
      f"bias {refined.clock_bias * 1e9:.3f} ns")
print(f"position error {err:.4f} m, bias error {abs(refined.clock_bias - bias_true) * 1e12:.2f} ps")
