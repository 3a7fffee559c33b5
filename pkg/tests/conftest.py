import numpy as np
import pytest
from hypothesis import strategies as st

from skillgen.datagen import record_source
from skillgen.geometry import Pose, axis_angle_quat
from skillgen.world.robot import desk_arm, three_link_arm
from skillgen.world.task import load_task


def random_pose(rng, scale=1.0):
    q = rng.standard_normal(4)
    return Pose(rng.uniform(-scale, scale, 3), q / np.linalg.norm(q))


finite = st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False)


@st.composite
def poses(draw, scale=2.0):
    t = [draw(st.floats(-scale, scale, allow_nan=False)) for _ in range(3)]
    q = np.array([draw(st.floats(-1, 1, allow_nan=False)) for _ in range(4)])
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0, 0, 0])
    return Pose(t, q)


def yaw(deg):
    return axis_angle_quat((0, 0, 1), np.radians(deg))


@pytest.fixture(scope="session")
def arm3():
    return three_link_arm()


@pytest.fixture(scope="session")
def desk6():
    return desk_arm()


@pytest.fixture(scope="session")
def peg():
    return load_task("peg")


@pytest.fixture(scope="session")
def stack():
    return load_task("stack")


@pytest.fixture(scope="session")
def peg_source(peg):
    return record_source(peg, "D0", 10, seed=1)


@pytest.fixture(scope="session")
def peg_fixed_source(peg):
    return record_source(peg, "fixed", 1, seed=1)


def peg_dict():
    """Fresh copy of the shipped peg task definition, for building variants."""
    import json
    from importlib import resources
    return json.loads(resources.files("skillgen.data").joinpath("tasks", "peg.json").read_text())
