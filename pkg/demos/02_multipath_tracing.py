"""Enumerate the ground-truth multipath between the user and the BS.

The default scene is tuned so this exact placement produces seven paths:
one direct, three single-bounce, three double-bounce.

Run:  python demos/02_multipath_tracing.py
"""

import sys

import numpy as np

from canyonloc import census, default_scene, dump_paths_jsonl, generate_paths

scene = default_scene()
ue = np.array([-15.0, -15.0, 0.0])

paths = generate_paths(ue, scene, max_bounces=2)
n_los, n_single, n_multi = census(paths)
print(f"{len(paths)} paths: {n_los} direct, {n_single} single-bounce, {n_multi} multi-bounce\n")

print(f"{'idx':>3} {'kind':<14} {'surfaces':<10} {'length m':>9} {'delay ns':>9} "
      f"{'azimuth deg':>12} {'zenith deg':>11}")
for p in paths:
    seq = "-".join(map(str, p.surface_sequence)) or "direct"
    print(f"{p.index:>3} {p.kind:<14} {seq:<10} {p.length:>9.3f} {p.delay * 1e9:>9.3f} "
          f"{np.degrees(p.azimuth):>12.2f} {np.degrees(p.zenith):>11.2f}")

print("\nReflection points:")
for p in paths:
    if p.reflection_points:
        pts = " -> ".join(str(tuple(round(c, 3) for c in q)) for q in p.reflection_points)
        print(f"  path {p.index}: {pts}")

if "--dump" in sys.argv:
    dump_paths_jsonl(paths, sys.stdout)
