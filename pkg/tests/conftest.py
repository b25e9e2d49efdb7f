import numpy as np
import pytest

from blendretarget import datagen, net


@pytest.fixture(scope="session")
def rig():
    return datagen.make_procedural_rig(0)


@pytest.fixture(scope="session")
def small_rig():
    return datagen.make_procedural_rig(3, V=600, K=12)


@pytest.fixture(scope="session")
def tmpl(rig):
    return datagen.default_template(rig)


@pytest.fixture(scope="session")
def poses():
    return datagen.default_pose_distribution()


@pytest.fixture(scope="session")
def dataset(rig, tmpl, poses):
    return datagen.generate_dataset(rig, tmpl, rig.reasonable, poses, datagen.GenConfig(count=1200, seed=7))


@pytest.fixture(scope="session")
def trained(rig, dataset):
    """A briefly trained full-grouping model and its held-out samples."""
    X, Y = datagen.stack(dataset)
    spec = net.NetworkSpec.for_rig(rig, "full")
    cfg = net.TrainConfig(lr0=1e-3, epochs=6, seed=0)
    params, report = net.train(X, Y, spec, cfg)
    _, va = net.split_indices(len(dataset), cfg)
    return params, spec, report, [dataset[i] for i in va]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[n])
