import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cavitydetect.config import PRESETS, ConfigError, RunConfig
from cavitydetect.counting import CountStream
from cavitydetect.formats import (FormatError, RunManifest, read_counts, read_curve, read_json,
                                  sha256_file, write_counts, write_curve, write_json)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load_and_validate(name):
    cfg = RunConfig.load(preset=name)
    cfg.check()
    assert cfg.data["schema_version"] == 1


def test_preset_builders():
    cfg = RunConfig.load(preset="paper-fluorescence")
    plan = cfg.plan()
    assert plan.mode.value == "fluorescence" and plan.yield_per_us == pytest.approx(0.42)
    assert cfg.cloud().peak_mean_neff == pytest.approx(1.24)
    rates = RunConfig.load(preset="table1").detector_rates()
    assert (rates.signal, rates.background) == (420.0, 3.84)


def test_file_layered_over_preset(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("schema_version: 1\nexperiment:\n  n_trials: 7\n")
    cfg = RunConfig.load(str(p), "paper-reflection")
    assert cfg.plan().n_trials == 7
    assert cfg.plan().bin_width == 2.0
    assert cfg.with_seed(5).seed == 5 and cfg.seed != 5


@pytest.mark.parametrize("text, match", [
    ("schema_version: 2\n", "schema_version"),
    ("schema_version: 1\nbogus: 1\n", "unknown key 'bogus'"),
    ("schema_version: 1\nneff:\n  mean: abc\n", ":3: 'neff.mean'"),
    ("schema_version: 1\nneff:\n  mean: 0\n", "positive"),
    ("schema_version: 1\ndrive:\n  fringe_amplitude: 2.0\n", "drive"),
    ("schema_version: 1\nexperiment:\n  mode: sideways\n", "experiment"),
    ("schema_version: 1\nparams:\n  g: -1\n", "params"),
    ("[1, 2]\n", "mapping"),
    ("a: [\n", "malformed"),
])
def test_config_errors_are_located(text, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_text(text, "x.yaml")


def test_missing_section_and_source():
    cfg = RunConfig.from_text("schema_version: 1\n")
    with pytest.raises(ConfigError, match="required"):
        cfg.require("steady")
    with pytest.raises(ConfigError):
        RunConfig.load()
    with pytest.raises(ConfigError):
        RunConfig.load(preset="nope")


def test_dump_roundtrip():
    cfg = RunConfig.load(preset="paper-reflection")
    again = RunConfig.from_text(cfg.dump())
    assert again.data == cfg.data


@settings(max_examples=25, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 4), st.integers(1, 12)), elements=st.integers(0, 50)),
       st.floats(0.1, 5.0), st.floats(-100, 100))
def test_counts_roundtrip(tmp_path_factory, counts, width, t0):
    path = tmp_path_factory.mktemp("c") / "counts.csv"
    stream = CountStream(width, counts, t0)
    write_counts(path, stream)
    back = read_counts(path)
    np.testing.assert_array_equal(back.counts, counts)
    assert back.t0 == t0
    if counts.shape[1] > 1:
        assert back.bin_width == pytest.approx(width, rel=1e-12)


@pytest.mark.parametrize("body, match", [
    ("", "empty"),
    ("a,b,c,d\n", "header"),
    ("trial,bin_index,t_us,counts\n", "no data"),
    ("trial,bin_index,t_us,counts\n0,0,0.0,1\n0,1,1.0\n", "malformed"),
    ("trial,bin_index,t_us,counts\n0,0,0.0,1\n0,1,1.0,2\n1,0,0.0,1\n", "ragged"),
])
def test_counts_read_errors(tmp_path, body, match):
    p = tmp_path / "c.csv"
    p.write_text(body)
    with pytest.raises(FormatError, match=match):
        read_counts(p)


def test_curve_and_json_roundtrip(tmp_path):
    x = np.linspace(0, 1, 7)
    write_curve(tmp_path / "c.csv", x, x**2, None)
    back = read_curve(tmp_path / "c.csv")
    np.testing.assert_array_equal(back["x"], x)
    np.testing.assert_array_equal(back["yerr"], 0)
    write_json(tmp_path / "j.json", {"a": np.float64(np.nan), "b": np.arange(3), "c": 1j})
    assert read_json(tmp_path / "j.json") == {"a": None, "b": [0, 1, 2], "c": {"re": 0.0, "im": 1.0}}
    (tmp_path / "bad.csv").write_text("u,v\n")
    with pytest.raises(FormatError):
        read_curve(tmp_path / "bad.csv")


def test_manifest_checksums(tmp_path):
    f = tmp_path / "data.txt"
    f.write_text("hello\n")
    m = RunManifest.start("cmd", "0", 3, {"k": 1})
    m.add(f)
    m.finish(tmp_path)
    data = json.loads((tmp_path / "manifest.json").read_text())
    assert data["outputs"][0]["sha256"] == sha256_file(f)
    assert data["outputs"][0]["sha256"] == \
        "5891b5b522d5df086d0ff0b110fbd9d21bb4fc7163af34d08286a2e846f6be03"
    assert data["seed"] == 3 and data["finished"] >= data["started"]
