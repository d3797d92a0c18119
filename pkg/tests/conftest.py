import numpy as np
import pytest

from rigbridge.animation import derive_corrective_masks
from rigbridge.skeleton_fit import build_joint_regressor
from rigbridge.synth import SynthConfig, make_correctives_fixture, make_rig, with_correctives


@pytest.fixture(scope="session")
def synth():
    """Default 12-joint capsule humanoid with ground truth."""
    return make_rig(SynthConfig())


@pytest.fixture(scope="session")
def rig(synth):
    return synth.rig


@pytest.fixture(scope="session")
def regressor(rig):
    return build_joint_regressor(rig)


@pytest.fixture(scope="session")
def finger_synth():
    return make_rig(SynthConfig(fingers=5))


@pytest.fixture(scope="session")
def joint_masks(rig):
    return derive_corrective_masks(rig, geodesic_radius=0.05)


@pytest.fixture(scope="session")
def corrective_synth(synth, joint_masks):
    net = make_correctives_fixture(synth, joint_masks, n_train=120, seed=99)
    return with_correctives(synth, net)


@pytest.fixture(scope="session")
def rest(rig):
    return rig.bind_vertices()


def rng(seed=0):
    return np.random.default_rng(seed)
