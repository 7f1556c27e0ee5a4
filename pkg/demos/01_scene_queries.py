"""Walk through the three geometric queries the map model answers.

Run:  python demos/01_scene_queries.py
"""

import numpy as np

from canyonloc import default_scene, find_surface, incidence_point, mirror_point, segment_occluded

scene = default_scene()
bs = scene.bs_position
ue = np.array([-15.0, -15.0, 0.0])

print("Street-canyon scene")
print(f"  BS at {bs}, user at {ue}")
for s in scene.surfaces:
    print(f"  surface {s.id}: normal {s.normal}, anchor {s.anchor}")

print("\n1) Nearest-hit ray casting from the BS")
for name, d in [
    ("toward the west facade", np.array([-1.0, -0.6, -0.6])),
    ("down the open street", np.array([0.0, -1.0, -0.2])),
    ("up into the sky", np.array([0.2, 0.1, 1.0])),
]:
    hit = find_surface(d, bs, scene)
    if hit is None:
        print(f"  {name}: no surface hit")
    else:
        print(f"  {name}: surface {hit.surface_id} at {np.round(hit.point, 3)} (t = {hit.distance:.2f} m)")

print("\n2) Mirror image of the user across each facade")
for s in scene.surfaces:
    print(f"  surface {s.id}: image at {np.round(mirror_point(ue, s), 3)}")

print("\n3) Specular incidence points between user and BS")
for s in scene.surfaces:
    r = incidence_point(ue, bs, s)
    if r is None:
        print(f"  surface {s.id}: no single-bounce reflection")
    else:
        length = np.linalg.norm(ue - r) + np.linalg.norm(r - bs)
        print(f"  surface {s.id}: reflection at {np.round(r, 3)}, path length {length:.3f} m")

print("\n4) Occlusion checks")
print(f"  direct segment UE->BS blocked: {segment_occluded(ue, bs, scene)}")
behind_west = np.array([-25.0, 0.0, 2.0])
print(f"  segment from behind the west facade blocked: "
      f"{segment_occluded(behind_west, bs, scene)}")
