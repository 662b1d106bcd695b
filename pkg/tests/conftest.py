import numpy as np
import pytest

from tljd.dataset import SynthConfig, TYPES, generate_synthetic, make_split
from tljd.model import ModelConfig, TljdModel


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f`` w.r.t. every entry of array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def tiny_partition(K=8):
    per = K // 4
    return {t: list(range(i * per, (i + 1) * per)) for i, t in enumerate(TYPES)}


def make_tiny_model(ablation="full", K=8, d=4, heads=2, layers=1, n_train=6, seed=3):
    rng = np.random.default_rng(seed + 100)
    V = rng.uniform(0, 1, size=(n_train, K))
    cfg = ModelConfig(K=K, d=d, heads=heads, layers=layers, partition=tiny_partition(K), ablation=ablation)
    model = TljdModel.build(cfg, V, seed=seed)
    # non-trivial layer-norm and bias values so every parameter matters
    for name in model.params.names():
        if name.endswith((".gain", ".bias", ".b", ".b1", ".b2", ".fc.b")) or ".b." in name:
            shape = model.params.shape(name)
            model.params.set_value(name, model.params.value(name) + rng.normal(0, 0.3, size=shape))
    return model


@pytest.fixture
def tiny_model():
    return make_tiny_model()


@pytest.fixture(scope="session")
def small_synth():
    cfg = SynthConfig(cities=30, years=(2016, 2017, 2018, 2019), k=(2, 2, 2, 2), sigma=0.0, seed=5)
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def small_split(small_synth):
    return make_split(small_synth[0], "ccp_mixed_year", 0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
