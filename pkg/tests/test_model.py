import numpy as np
import pytest

from lineloss import autograd as ag
from lineloss.errors import ContractError, DimensionError
from lineloss.gradcheck import model_checks
from lineloss.graph import FeederGraph, normalize_adjacency
from lineloss.model import ForecastModel, ModelConfig, d_attention, gcn_forward, model_forward
from lineloss.training import ablation_configs

SMALL = dict(gcn_hidden=8, gcn_out=3, embed_dim=4, d_att_hidden=4, f_att_hidden=4, t_att_hidden=4,
             lstm_hidden=6, dropout=0.0)


def path_adj(n):
    return normalize_adjacency(FeederGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)]))


def test_gcn_output_nonnegative_and_shaped():
    rng = np.random.default_rng(0)
    out = gcn_forward(rng.normal(size=(2, 5, 3, 4)), path_adj(3), rng.normal(size=(4, 6)), rng.normal(size=(6, 2)))
    assert out.shape == (2, 5, 3, 2)
    assert np.all(out.data >= 0)


def test_gcn_zero_weights_give_zero():
    out = gcn_forward(np.ones((3, 2)), path_adj(3), np.zeros((2, 4)), np.zeros((4, 5)))
    np.testing.assert_array_equal(out.data, 0)


def test_d_attention_equal_nodes_get_equal_scores():
    g = np.ones((1, 4, 3))
    rng = np.random.default_rng(1)
    _, zeta = d_attention(g, rng.normal(size=(3, 2)), np.zeros(2), rng.normal(size=(2, 1)), np.zeros(1))
    np.testing.assert_allclose(zeta.data[..., 0], 0.25)


def test_forward_shapes_and_attention_normalization():
    cfg = ModelConfig(n_nodes=3, window=5, in_channels=4, horizon=2, **SMALL)
    m = ForecastModel(cfg, path_adj(3))
    x = np.random.default_rng(0).uniform(size=(7, 5, 3, 4))
    y, tr = m.forward(x)
    assert y.shape == (7, 2) and np.all(y.data >= 0)
    assert tr.zeta.shape == (7, 5, 3) and tr.xi.shape == (7, 5, 9) and tr.nu.shape == (7, 5)
    for s, ax in ((tr.zeta, -1), (tr.xi, -1), (tr.nu, -1)):
        np.testing.assert_allclose(s.sum(axis=ax), 1.0, atol=1e-12)


def test_single_window_forward():
    cfg = ModelConfig(n_nodes=2, window=3, in_channels=2, horizon=4, **SMALL)
    y, _ = model_forward(np.zeros((2, 3, 2)), path_adj(2), cfg)
    assert y.shape == (4,)
    with pytest.raises(DimensionError):
        model_forward(np.zeros((2, 4, 2)), path_adj(2), cfg)


def test_every_ablation_variant_runs():
    base = ModelConfig(n_nodes=2, window=3, in_channels=2, horizon=1, **SMALL)
    x = np.random.default_rng(2).uniform(size=(4, 3, 2, 2))
    names = []
    for name, cfg in ablation_configs(base):
        m = ForecastModel(cfg, path_adj(2))
        y, tr = m.forward(x)
        assert y.shape == (4, 1)
        names.append(name)
        assert (tr.nu is None) == (not cfg.use_t_atten)
    assert names == ["Attention-GCN-LSTM", "- T_atten", "- LSTM", "- F_atten", "- D_atten"]
    last = ablation_configs(base)[-1][1]
    assert not (last.use_t_atten or last.use_lstm or last.use_f_atten or last.use_d_atten)


def test_ablated_groups_receive_no_gradient():
    cfg = ModelConfig(n_nodes=2, window=3, in_channels=2, use_lstm=False, use_t_atten=False, **SMALL)
    m = ForecastModel(cfg, path_adj(2))
    assert set(m.active_groups()) == {"gcn", "d_atten", "f_atten", "head"}
    with ag.tape():
        y, _ = m.forward(np.ones((2, 3, 2, 2)))
        ag.backward(ag.reduce_sum(y))
    assert all(m.params[n].grad is None for n in m.groups["lstm"])


def test_state_dict_round_trip_and_init_determinism():
    cfg = ModelConfig(n_nodes=2, window=3, in_channels=2, seed=4, **SMALL)
    a, b = ForecastModel(cfg, path_adj(2)), ForecastModel(cfg, path_adj(2))
    for k, v in a.state_dict().items():
        np.testing.assert_array_equal(v, b.state_dict()[k])
    c = ForecastModel(ModelConfig(n_nodes=2, window=3, in_channels=2, seed=5, **SMALL), path_adj(2))
    c.load_state_dict(a.state_dict())
    x = np.ones((1, 3, 2, 2))
    np.testing.assert_array_equal(c.predict(x), a.predict(x))


def test_config_validation():
    with pytest.raises(DimensionError):
        ModelConfig(n_nodes=0, window=3, in_channels=2)
    with pytest.raises(ContractError):
        ModelConfig(n_nodes=2, window=3, in_channels=2, time_aggregation="max")
    with pytest.raises(DimensionError):
        ForecastModel(ModelConfig(n_nodes=3, window=3, in_channels=2), path_adj(2))


def test_time_aggregation_variants_run():
    for agg in ("weighted_sum", "mean", "last"):
        cfg = ModelConfig(n_nodes=2, window=3, in_channels=2, time_aggregation=agg, **SMALL)
        y, _ = ForecastModel(cfg, path_adj(2)).forward(np.ones((2, 3, 2, 2)))
        assert y.shape == (2, 1)


def test_block_gradients_on_second_toy_seed():
    assert max(model_checks(seed=7).values()) < 1e-4
