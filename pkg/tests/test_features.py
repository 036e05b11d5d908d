import numpy as np
import pytest

from lineloss.errors import (AlignmentError, ContractError, DegenerateSplitError,
                             InsufficientDataError, SchemaError, VocabularyError)
from lineloss.features import (ELECTRICAL_CHANNELS, MinMaxScaler, ScadaSeries, StaticAttributes,
                               WeatherSeries, build_mixed_features, default_vocab,
                               derive_electrical_indicators, make_windows, one_hot_static,
                               read_scada, read_scada_csv, resample_hourly, split_dataset,
                               write_loss_csv, write_scada_csv)

T0 = np.datetime64("2017-01-01T00:00:00", "s")


def hourly(n):
    return T0 + np.arange(n).astype("timedelta64[h]")


def small_dataset(n_nodes=2, t=40, seed=0):
    rng = np.random.default_rng(seed)
    ts = hourly(t)
    scada = ScadaSeries(ts, rng.uniform(0, 1, (n_nodes, t, len(ELECTRICAL_CHANNELS))), rng.uniform(4, 8, t))
    static = StaticAttributes(scada.node_ids, ("S9", "S11")[:n_nodes], ("overhead", "cable")[:n_nodes])
    weather = WeatherSeries(ts, rng.normal(size=(t, 7)))
    return scada, static, weather


def test_indicator_examples():
    lr, pf, imb = derive_electrical_indicators(100.0, 0.0, 10, 10, 10, 200.0)
    assert (lr, pf, imb) == (0.5, 1.0, 0.0)
    _, pf, imb = derive_electrical_indicators(3.0, 4.0, 9, 10, 11, 10.0)
    assert pf == pytest.approx(0.6)
    assert imb == pytest.approx(0.2)
    _, pf, imb = derive_electrical_indicators(0.0, 0.0, 0, 0, 0, 10.0)
    assert pf == 0.0 and imb == 0.0
    with pytest.raises(ContractError):
        derive_electrical_indicators(1.0, 0.0, 1, 1, 1, 0.0)


def test_resample_keeps_on_the_hour():
    ts = T0 + (np.arange(8) * 15).astype("timedelta64[m]")
    s = ScadaSeries(ts, np.arange(8.0).reshape(1, 8, 1), np.arange(8.0))
    h = resample_hourly(s)
    np.testing.assert_array_equal(h.loss, [0.0, 4.0])
    same = ScadaSeries(hourly(3), np.zeros((1, 3, 1)), np.zeros(3))
    assert resample_hourly(same).n_steps == 3
    bad = ScadaSeries(T0 + np.array([0, 10, 20]).astype("timedelta64[m]"), np.zeros((1, 3, 1)), np.zeros(3))
    with pytest.raises(AlignmentError):
        resample_hourly(bad)


def test_one_hot_and_vocab_errors():
    a = StaticAttributes(("x", "y"), ("S11", "S9"), ("mixed", "overhead"))
    oh, cols = one_hot_static(a, default_vocab())
    assert oh.shape == (2, 5)
    np.testing.assert_array_equal(oh.sum(axis=1), [2, 2])
    assert oh[0, cols.index("transformer_type=S11")] == 1
    with pytest.raises(VocabularyError):
        one_hot_static(StaticAttributes(("x",), ("S13",), ("cable",)), default_vocab())


def test_scaler_round_trip_and_constant_channel():
    x = np.array([[0.0, 5.0], [2.0, 5.0], [4.0, 5.0]])
    s = MinMaxScaler.fit(x)
    z = s.transform(x)
    np.testing.assert_array_equal(z[:, 0], [0, 0.5, 1])
    np.testing.assert_array_equal(z[:, 1], 0)
    np.testing.assert_allclose(s.inverse(z), x)
    back = MinMaxScaler.from_dict(s.to_dict())
    np.testing.assert_array_equal(back.lo, s.lo)
    np.testing.assert_array_equal(back.hi, s.hi)


def test_mixed_features_fit_on_train_prefix():
    scada, static, weather = small_dataset(t=50)
    c = build_mixed_features(scada, static, weather)
    assert c.data.shape == (2, 50, 1 + 11 + 5 + 7)
    assert c.channel_layout[0] == "loss"
    np.testing.assert_allclose(c.scaler.lo[0], scada.loss[:40].min())
    np.testing.assert_allclose(c.scaler.inverse(c.data)[0, :, 0], scada.loss)
    # loss channel identical across nodes
    np.testing.assert_array_equal(c.data[0, :, 0], c.data[1, :, 0])


def test_mixed_features_reject_gaps_and_misalignment():
    scada, static, weather = small_dataset()
    scada.electrical[0, 3, 2] = np.nan
    with pytest.raises(ContractError):
        build_mixed_features(scada, static, weather)
    scada, static, _ = small_dataset()
    with pytest.raises(AlignmentError):
        build_mixed_features(scada, static, WeatherSeries(hourly(40) + np.timedelta64(1, "h"), np.zeros((40, 7))))


def test_windows_and_targets():
    scada, static, weather = small_dataset(t=30)
    c = build_mixed_features(scada, static, weather)
    w = make_windows(c, window=5, horizon=3)
    assert len(w) == 30 - 5 - 3 + 1
    x, y = w[0]
    assert x.shape == (2, 5, c.data.shape[2])
    np.testing.assert_array_equal(y, scada.loss[5:8])
    xb, yb = w.batch([0, 4])
    assert xb.shape == (2, 5, 2, c.data.shape[2])
    np.testing.assert_array_equal(xb[1, :, 0, :], c.data[0, 4:9, :])
    np.testing.assert_array_equal(yb[1], scada.loss[9:12])
    with pytest.raises(InsufficientDataError):
        make_windows(c, window=28, horizon=3)


def test_split_sizes():
    scada, static, weather = small_dataset(t=108)
    w = make_windows(build_mixed_features(scada, static, weather), 5, 4)   # 100 windows
    tr, va, te = split_dataset(w)
    assert (len(tr), len(va), len(te)) == (80, 10, 10)
    assert tr.starts[-1] < va.starts[0] < te.starts[0]
    with pytest.raises(DegenerateSplitError):
        split_dataset(w.subset(slice(0, 9)))


def test_scada_csv_round_trip(tmp_path):
    scada, _, _ = small_dataset(t=6)
    scada.electrical[1, 2, 4] = np.nan
    write_scada_csv(scada, tmp_path / "s.csv")
    write_loss_csv(scada.timestamps, scada.loss, tmp_path / "l.csv")
    back = read_scada(tmp_path / "s.csv", tmp_path / "l.csv")
    np.testing.assert_allclose(back.electrical, scada.electrical, rtol=1e-11, equal_nan=True)
    assert back.node_ids == scada.node_ids


def test_scada_csv_schema_errors(tmp_path):
    scada, _, _ = small_dataset(t=3)
    write_scada_csv(scada, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    (tmp_path / "dup.csv").write_text("\n".join(lines + [lines[1]]) + "\n")
    with pytest.raises(SchemaError):
        read_scada_csv(tmp_path / "dup.csv")
    (tmp_path / "hdr.csv").write_text("\n".join([lines[0].replace("ua", "volts")] + lines[1:]) + "\n")
    with pytest.raises(SchemaError):
        read_scada_csv(tmp_path / "hdr.csv")
