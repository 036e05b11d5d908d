import numpy as np
import pytest

from lineloss.features import FeederDataset
from lineloss.pipeline import prepare
from lineloss.synth import SynthSpec, synthesize

SMALL_MODEL = dict(gcn_hidden=8, gcn_out=3, embed_dim=4, d_att_hidden=4, f_att_hidden=4,
                   t_att_hidden=4, lstm_hidden=8, dropout=0.0)


@pytest.fixture(scope="session")
def tiny_prepared():
    """Clean synthetic feeder, 3 nodes, 6 days hourly, window 6, horizon 2."""
    d = synthesize(SynthSpec(n_nodes=3, days=6, cadence_minutes=60, seed=2))
    return prepare(FeederDataset(d.scada, d.static, d.weather), d.graph, window=6, horizon=2)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
