"""Synthesize noisy measurements and associate each with a map surface.

Shows how the per-path SNR sets the error bars, and how ray-cast scoring
assigns each non-direct measurement a reflecting surface.

Run:  python demos/03_measurements_and_association.py
"""

import math

import numpy as np

from canyonloc import (
    AssociationConfig,
    RadioConfig,
    associate_all,
    default_scene,
    generate_paths,
    noise_variances,
    path_snr,
    synthesize,
    with_tx_power,
)

scene = default_scene()
ue = np.array([-15.0, -15.0, 0.0])
paths = generate_paths(ue, scene)
clock_bias = 100e-9

for power in (-30.0, 0.0):
    radio = with_tx_power(RadioConfig(), power)
    print(f"\n=== transmit power {power:+.0f} dBm ===")
    print(f"{'idx':>3} {'snr dB':>7} {'sigma_tau ns':>13} {'sigma_angle deg':>16}")
    for p in paths:
        var_d, var_a, _ = noise_variances(p, radio)
        print(f"{p.index:>3} {path_snr(p, radio):>7.1f} {math.sqrt(var_d) * 1e9:>13.3f} "
              f"{math.degrees(math.sqrt(var_a)):>16.3f}")

    labeled = synthesize(paths, radio, clock_bias, rng_seed=2024)
    measurements = [lm.measurement for lm in labeled]
    hypotheses = associate_all(measurements, scene, AssociationConfig(rng_seed=7))

    print(f"\n{'idx':>3} {'hypothesis':>11} {'score':>6} {'status':<18} {'truth':<18}")
    for h, lm in zip(hypotheses, labeled):
        origin = "direct" if h.origin == 0 else f"surface {h.origin}"
        truth = lm.truth.kind
        if lm.truth.surface_sequence:
            truth += str(lm.truth.surface_sequence)
        print(f"{h.measurement_index:>3} {origin:>11} {h.score:>6.3f} {h.status:<18} {truth:<18}")
