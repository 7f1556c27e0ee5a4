import numpy as np
import pytest

from canyonloc import Bounds, Scene, Surface, default_scene, generate_paths


def make_wall_x(sid, x, normal_sign, y0=-50.0, y1=50.0, z0=0.0, z1=50.0):
    """Rectangular wall on the plane x = const."""
    return Surface(
        id=sid,
        normal=np.array([float(normal_sign), 0.0, 0.0]),
        anchor=np.array([x, 0.5 * (y0 + y1), 0.5 * (z0 + z1)]),
        boundary=np.array([[x, y0, z0], [x, y1, z0], [x, y1, z1], [x, y0, z1]]),
    )


def make_ground(sid=1, half=50.0):
    """Square ground patch on z = 0."""
    return Surface(
        id=sid,
        normal=np.array([0.0, 0.0, 1.0]),
        anchor=np.zeros(3),
        boundary=np.array(
            [[-half, -half, 0.0], [half, -half, 0.0], [half, half, 0.0], [-half, half, 0.0]]
        ),
    )


def make_scene(surfaces, bs=(0.0, 0.0, 15.0), bounds=None):
    if bounds is None:
        bounds = Bounds(x_min=-60.0, x_max=60.0, y_min=-60.0, y_max=60.0, z_max=60.0)
    return Scene(surfaces=list(surfaces), bs_position=np.asarray(bs, dtype=float), bounds=bounds)


@pytest.fixture(scope="session")
def canyon_scene():
    return default_scene()


@pytest.fixture(scope="session")
def ue_position():
    return np.array([-15.0, -15.0, 0.0])


@pytest.fixture(scope="session")
def canyon_paths(canyon_scene, ue_position):
    return generate_paths(ue_position, canyon_scene, max_bounces=2)


def random_surface(rng, sid=1):
    """Random bounded convex quad with a random orientation."""
    normal = rng.normal(size=3)
    while np.linalg.norm(normal) < 1e-3:
        normal = rng.normal(size=3)
    normal = normal / np.linalg.norm(normal)
    anchor = rng.uniform(-20.0, 20.0, size=3)
    # orthonormal in-plane frame
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(normal, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    a, b = rng.uniform(2.0, 15.0, size=2)
    corners = [anchor + sa * a * e1 + sb * b * e2 for sa, sb in ((-1, -1), (1, -1), (1, 1), (-1, 1))]
    return Surface(id=sid, normal=normal, anchor=anchor, boundary=np.array(corners))
