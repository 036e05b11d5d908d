import numpy as np
import pytest

from lineloss.errors import ContractError
from lineloss.synth import SynthSpec, generate_feeder, inject_bad_data, synthesize, write_dataset


def test_feeder_is_spanning_tree():
    for kind in ("path", "tree", "random-tree"):
        for n in (2, 5, 13):
            g, static = generate_feeder(SynthSpec(n_nodes=n, topology=kind, seed=3))
            assert len(g.edges) == n - 1 and g.is_connected()
            assert len(static.node_ids) == n
    g, _ = generate_feeder(SynthSpec(n_nodes=2))
    assert g.edges == {(0, 1)}


def test_generation_is_deterministic():
    a, b = synthesize(SynthSpec(days=3, seed=9)), synthesize(SynthSpec(days=3, seed=9))
    np.testing.assert_array_equal(a.corrupted.electrical, b.corrupted.electrical)
    np.testing.assert_array_equal(a.scada.loss, b.scada.loss)
    assert a.graph == b.graph
    c = synthesize(SynthSpec(days=3, seed=10))
    assert not np.array_equal(a.scada.loss, c.scada.loss)


def test_noise_free_loss_follows_formula():
    d = synthesize(SynthSpec(days=2, noise=0.0))
    np.testing.assert_allclose(d.scada.loss, d.formula.noise_free(d.loads, d.weather.values[:, 0]))


def test_bad_data_fraction():
    spec = SynthSpec(days=7)
    d = synthesize(spec)
    frac = (d.corruption_mask > 0).mean()
    assert abs(frac - 0.0959) <= 0.002
    assert np.isnan(d.corrupted.electrical).sum() == (d.corruption_mask == 1).sum()
    spikes = d.corruption_mask == 2
    ratio = d.corrupted.electrical[spikes] / d.scada.electrical[spikes]
    assert ratio.min() >= 5 and ratio.max() <= 20


def test_zero_fraction_and_overflow():
    spec = SynthSpec(days=1, missing_fraction=0.0, outlier_fraction=0.0)
    d = synthesize(spec)
    assert not d.corruption_mask.any()
    with pytest.raises(ContractError):
        inject_bad_data(d.scada, SynthSpec(days=1, missing_fraction=0.01, outlier_fraction=0.02))
    with pytest.raises(ContractError):
        SynthSpec(missing_fraction=1.0)


def _corr(loads, pairs):
    c = np.corrcoef(loads)
    return np.mean([c[i, j] for i, j in pairs])


def test_coupling_raises_neighbor_correlation():
    d = synthesize(SynthSpec(days=14, coupling=0.8, n_nodes=10, seed=1))
    n = d.graph.n_nodes
    nb = list(d.graph.edges)
    far = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in d.graph.edges]
    assert _corr(d.loads, nb) > _corr(d.loads, far)


def test_zero_coupling_neighbor_permutation():
    # without coupling, neighbor pairs look like any other pairs
    d = synthesize(SynthSpec(days=14, coupling=0.0, n_nodes=10, seed=1))
    resid = d.loads - d.loads.mean(axis=0, keepdims=True)
    n = d.graph.n_nodes
    nb = list(d.graph.edges)
    far = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in d.graph.edges]
    assert abs(_corr(resid, nb) - _corr(resid, far)) < 0.15


def test_write_dataset_files(tmp_path):
    paths = write_dataset(synthesize(SynthSpec(days=1, n_nodes=3)), tmp_path)
    for p in paths.values():
        assert p.exists() and p.stat().st_size > 0
    head = paths["mask"].read_text().splitlines()[0]
    assert head == "timestamp,node_id,channel,kind,true_value"
