import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from crosspaint.geometry import RigidTransform


def random_transform(rng, scale=1.0) -> RigidTransform:
    q = Rotation.random(random_state=rng).as_quat()  # x y z w
    return RigidTransform(rng.uniform(-scale, scale, 3), [q[3], q[0], q[1], q[2]])


def oracle_matrix(T: RigidTransform) -> np.ndarray:
    """4x4 homogeneous matrix built with scipy, independent of our quaternion code."""
    w, x, y, z = T.rotation
    m = np.eye(4)
    m[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
    m[:3, 3] = T.translation
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tabletop(robot=None, state=None, base=None, cubes=None):
    """Scene of the harness tabletop, optionally with one robot in it."""
    from crosspaint.harness import cube_objects, static_objects
    from crosspaint.raster import Scene, SceneRobot

    objects = static_objects() + cube_objects(cubes or {"cube": [0.5, 0.05, 0.02]})
    robots = ()
    if robot is not None:
        robots = (SceneRobot(robot, state, base or RigidTransform()),)
    return Scene(objects=objects, robots=robots)
