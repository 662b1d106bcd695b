import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tljd import tensor as tn
from tljd.dataset import SynthConfig, generate_synthetic, make_split
from tljd.errors import BatchError, ConfigError, ContractError, DivergenceError, UndefinedMetricError
from tljd.model import TljdModel
from tljd.training import (
    TrainConfig,
    compute_metrics,
    evaluate,
    loss_er,
    loss_joint,
    loss_reg,
    train,
)


def naive_er(ex, a, y):
    return -np.mean([math.log(sum(a[i, t] * math.exp(-(y[i] - ex[i, t]) ** 2 / 2) for t in range(a.shape[1])))
                     for i in range(len(y))])


def random_gate(rng, n, k=4):
    a = rng.uniform(0.05, 1.0, size=(n, k))
    return a / a.sum(axis=1, keepdims=True)


# ------------------------------------------------------------------ regression loss


def test_loss_reg_exact_fit_is_zero():
    assert loss_reg([1.0, -2.0], [1.0, -2.0]).item() == 0.0


def test_loss_reg_hand_value():
    assert loss_reg([0.0, 0.0], [1.0, 3.0]).item() == 5.0


def test_loss_reg_matches_direct_sum():
    rng = np.random.default_rng(0)
    yh, y = rng.normal(size=9), rng.normal(size=9)
    ref = sum((a - b) ** 2 for a, b in zip(yh, y)) / 9
    assert loss_reg(yh, y).item() == pytest.approx(ref, abs=1e-12)


def test_loss_reg_empty_batch():
    with pytest.raises(BatchError):
        loss_reg(np.zeros(0), np.zeros(0))


# ------------------------------------------------------------------ responsibility loss


def test_loss_er_exact_experts_is_zero():
    y = np.array([1.0, 2.0])
    a = random_gate(np.random.default_rng(0), 2)
    assert loss_er(np.tile(y[:, None], (1, 4)), a, y).item() == pytest.approx(0.0, abs=1e-15)


def test_loss_er_single_expert_hand_value():
    ex = np.array([[3.0, 0.0, 0.0, 0.0]])
    a = np.array([[1.0, 0.0, 0.0, 0.0]])
    assert loss_er(ex, a, np.array([1.0])).item() == pytest.approx(2.0, abs=1e-15)


def test_loss_er_matches_naive_formula():
    rng = np.random.default_rng(3)
    ex, y, a = rng.normal(size=(5, 4)), rng.normal(size=5), random_gate(rng, 5)
    assert loss_er(ex, a, y).item() == pytest.approx(naive_er(ex, a, y), abs=1e-10)


def test_loss_er_rejects_non_probability_gate():
    with pytest.raises(ContractError):
        loss_er(np.zeros((1, 4)), np.array([[0.5, 0.5, 0.5, 0.0]]), np.zeros(1))


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-20, 20)),
       hnp.arrays(np.float64, (3, 4), elements=st.floats(0.01, 1.0)),
       hnp.arrays(np.float64, (3,), elements=st.floats(-20, 20)))
def test_loss_er_non_negative(ex, w, y):
    a = w / w.sum(axis=1, keepdims=True)
    assert loss_er(ex, a, y).item() >= 0.0


# ------------------------------------------------------------------ joint loss


def test_loss_joint_boundaries_and_value():
    r, e = tn.Tensor(2.0), tn.Tensor(5.0)
    assert loss_joint(r, e, 0.0).item() == 2.0
    assert loss_joint(r, e, 1.0).item() == 5.0
    assert loss_joint(r, e, 0.4).item() == pytest.approx(3.2, abs=1e-15)


@pytest.mark.parametrize("lam", [-0.1, 1.5])
def test_loss_joint_rejects_weight(lam):
    with pytest.raises(ConfigError):
        loss_joint(tn.Tensor(1.0), tn.Tensor(1.0), lam)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 10), st.floats(0, 10), st.floats(0, 5))
def test_loss_joint_monotone(lam, r, e, bump):
    base = loss_joint(tn.Tensor(r), tn.Tensor(e), lam).item()
    assert loss_joint(tn.Tensor(r + bump), tn.Tensor(e), lam).item() >= base
    assert loss_joint(tn.Tensor(r), tn.Tensor(e + bump), lam).item() >= base


# ------------------------------------------------------------------ metrics


def test_metrics_perfect():
    m = compute_metrics([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
    assert (m.r2, m.rmse, m.mae) == (1.0, 0.0, 0.0)


def test_metrics_mean_predictor():
    y = np.array([1.0, 2.0, 6.0])
    assert compute_metrics(y, np.full(3, y.mean())).r2 == pytest.approx(0.0, abs=1e-15)


def test_metrics_hand_values():
    m = compute_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 5.0])
    assert m.rmse == pytest.approx(math.sqrt(4 / 3), abs=1e-12)
    assert m.mae == pytest.approx(2 / 3, abs=1e-12)
    assert m.r2 == pytest.approx(-1.0, abs=1e-12)


def test_metrics_constant_target_keeps_errors():
    with pytest.raises(UndefinedMetricError) as info:
        compute_metrics([2.0, 2.0], [1.0, 3.0])
    assert info.value.report.rmse == 1.0 and info.value.report.mae == 1.0


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, st.integers(2, 12), elements=st.floats(-1e3, 1e3)), st.randoms())
def test_metrics_invariants_and_order(y, rnd):
    y_hat = y[::-1] * 0.5 + 1.0
    try:
        m = compute_metrics(y, y_hat)
    except UndefinedMetricError:
        return
    assert m.rmse >= m.mae - 1e-9 >= -1e-9 and m.r2 <= 1.0
    perm = list(range(len(y)))
    rnd.shuffle(perm)
    p = compute_metrics(y[perm], y_hat[perm])
    assert p.r2 == pytest.approx(m.r2, rel=1e-9, abs=1e-9)
    assert p.mae == pytest.approx(m.mae, rel=1e-12, abs=1e-12)


# ------------------------------------------------------------------ training loop


def linear_data(K=8, cities=30, seed=0):
    cfg = SynthConfig(cities=cities, k=(K // 4,) * 4, sigma=0.0, n_regions=1,
                      interactions=False, region_marker=False, seed=seed)
    table, _ = generate_synthetic(cfg)
    return table, make_split(table, "ccp_mixed_year", seed)


def tiny_config(**kw):
    base = dict(d=8, layers=1, heads=2, lam=0.4, learning_rate=1e-2, batch_size=16, epochs=3, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_learning_rate_keeps_initialization():
    table, split = linear_data()
    result = train(table, split, tiny_config(epochs=1, learning_rate=0.0))
    fresh = TljdModel.build(result.model.config, result.model.train_columns, seed=1)
    for n in fresh.params.names():
        assert result.model.params.value(n).tobytes() == fresh.params.value(n).tobytes()


def test_training_is_bit_deterministic():
    table, split = linear_data()
    a = train(table, split, tiny_config())
    b = train(table, split, tiny_config())
    assert a.log_text() == b.log_text()
    assert evaluate(a.model, table, split.test) == evaluate(b.model, table, split.test)


def test_convergence_on_linear_data():
    table, split = linear_data()
    assert len(table) == 120 and table.K == 8
    result = train(table, split, tiny_config(epochs=50))
    first, last = result.log[0].train_loss, result.log[49].train_loss
    assert last < 0.1 * first, (first, last)


def test_log_format_and_selection():
    table, split = linear_data()
    result = train(table, split, tiny_config(epochs=4))
    lines = result.log_text().splitlines()
    assert lines[0] == "epoch\ttrain_loss\tval_r2\tval_rmse\tval_mae"
    assert [l.split("\t")[0] for l in lines[1:]] == ["1", "2", "3", "4"]
    maes = [r.val.mae for r in result.log]
    assert result.best_epoch == 1 + maes.index(min(maes))
    got = evaluate(result.model, table, split.val).mae
    assert got == min(maes)


def test_divergence_reports_epoch_and_batch():
    table, split = linear_data()
    with pytest.raises(DivergenceError) as info:
        train(table, split, tiny_config(learning_rate=1e300))
    assert info.value.epoch >= 1 and info.value.batch >= 0


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lam=1.2)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": 1})
