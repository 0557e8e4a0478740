import json

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from weakcorr import config as cfgmod
from weakcorr import io
from weakcorr.config import ConfigError
from weakcorr.model import MM_PER_S, MS, UM

BASE = {
    "physics": {"atom_number": "5.0e4", "tf_radius_x_um": 20, "sound_speed_mm_s": 1.31},
    "simulation": {"nx": 128, "ny": 16, "shots": 8,
                   "sequences": [{"label": "a", "pulses": [{"time_ms": 0, "g": 1.0},
                                                           {"time_ms": 1.5, "g": 0.5}]}]},
}


def test_from_dict_units_and_coercion():
    cfg = cfgmod.from_dict(BASE)
    assert cfg.physics.atom_number == 5.0e4
    label, group, phys, pulses = cfg.sequences()[0]
    assert (label, group) == ("a", "main")
    assert phys.condensate.sound_speed == pytest.approx(1.31 * MM_PER_S)
    assert phys.condensate.tf_radius_x == pytest.approx(20 * UM)
    assert pulses[1].time == pytest.approx(1.5 * MS)
    assert phys.grid.shape == (16, 128)


def test_hash_stable_and_sensitive():
    a = cfgmod.from_dict(BASE)
    b = cfgmod.from_dict(json.loads(json.dumps(BASE)))
    assert a.hash() == b.hash() and len(a.hash()) == 16
    assert cfgmod.apply_overrides(a, seed=9).hash() != a.hash()


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(extra=1),
    lambda d: d["physics"].update(colour="blue"),
    lambda d: d["simulation"]["sequences"][0]["pulses"][0].update(phase=1),
    lambda d: d["simulation"]["sequences"][0].update(physics={"bogus": 1}),
])
def test_unknown_keys_rejected(mutate):
    d = json.loads(json.dumps(BASE))
    mutate(d)
    with pytest.raises(ConfigError, match="unknown"):
        cfgmod.from_dict(d)


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: d["simulation"].update(shots=1), "shots"),
    (lambda d: d["simulation"].update(sequences=[]), "sequences"),
    (lambda d: d["simulation"]["sequences"][0]["pulses"].pop(), "two pulses"),
    (lambda d: d.update(fit={"mode": "local"}), "fit.mode"),
    (lambda d: d.update(qwv={"fd_grid": [1.0]}), "fd_grid"),
    (lambda d: d["physics"].update(atom_number="lots"), "number"),
    (lambda d: d["simulation"].update(nx=12.5), "integer"),
])
def test_validation_errors(mutate, msg):
    d = json.loads(json.dumps(BASE))
    mutate(d)
    with pytest.raises(ConfigError, match=msg):
        cfgmod.from_dict(d)


def test_empty_and_missing(tmp_path):
    with pytest.raises(ConfigError, match="empty"):
        cfgmod.from_dict({})
    p = tmp_path / "empty.yaml"
    p.write_text("")
    with pytest.raises(ConfigError, match="empty"):
        cfgmod.load(p)
    with pytest.raises(ConfigError, match="not found"):
        cfgmod.load(tmp_path / "nope.yaml")


def test_load_yaml_and_bundled(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(BASE))
    assert cfgmod.load(p).hash() == cfgmod.from_dict(BASE).hash()
    for name in ("fig2", "fig3", "fig4"):
        assert cfgmod.bundled(name).name == name
    with pytest.raises(ConfigError):
        cfgmod.bundled("fig9")


dtypes = st.sampled_from([np.float64, np.float32, np.int64, np.int16, np.complex128, np.uint8])


@given(st.lists(st.tuples(dtypes, st.lists(st.integers(0, 5), max_size=3)), max_size=4),
       st.dictionaries(st.text(max_size=5), st.integers(), max_size=3))
def test_container_round_trip_bit_exact(specs, meta):
    c = io.TensorContainer(metadata=meta)
    rng = np.random.default_rng(0)
    for i, (dt, shape) in enumerate(specs):
        a = (rng.standard_normal(shape) * 100).astype(dt)
        c.add(f"a{i}", a, tuple(f"d{j}" for j in range(len(shape))), "u")
    buf = io.to_bytes(c)
    back = io.from_bytes(buf)
    assert back.metadata == meta
    for name, e in c.arrays.items():
        b = back.arrays[name]
        assert b.data.dtype == e.data.dtype and b.data.shape == e.data.shape
        assert b.data.tobytes() == e.data.tobytes()
        assert b.dims == e.dims and b.units == "u"
    assert io.to_bytes(back) == buf


def test_container_layout_alignment():
    c = io.TensorContainer().add("x", np.arange(3, dtype="<f8")).add("y", np.ones(5, "<i2"))
    buf = io.to_bytes(c)
    assert buf[:8] == io.MAGIC
    hlen = int.from_bytes(buf[12:20], "little")
    header = json.loads(buf[20:20 + hlen])
    start = 20 + hlen + (-(20 + hlen)) % 64
    assert start % 64 == 0
    for e in header["arrays"]:
        assert e["offset"] % 64 == 0
    x = np.frombuffer(buf[start:start + 24], "<f8")
    assert np.array_equal(x, [0, 1, 2])


def test_container_errors(tmp_path):
    buf = bytearray(io.to_bytes(io.TensorContainer().add("x", np.zeros(4))))
    with pytest.raises(io.ContainerError, match="magic"):
        io.from_bytes(b"NOTMAGIC" + bytes(buf[8:]))
    bad = bytearray(buf)
    bad[8:12] = (2).to_bytes(4, "little")
    with pytest.raises(io.ContainerError, match="version"):
        io.from_bytes(bytes(bad))
    with pytest.raises(io.ContainerError, match="past the end"):
        io.from_bytes(bytes(buf[:-40]))
    with pytest.raises(io.ContainerError):
        io.from_bytes(b"short")
    with pytest.raises(io.ContainerError):
        io.read(tmp_path / "missing.wkc")
    with pytest.raises(ValueError):
        io.to_bytes(io.TensorContainer().add("o", np.array([object()])))


def test_write_and_sidecar(tmp_path):
    c = io.TensorContainer(metadata={"config_hash": "abc"}).add("x", np.arange(4.0), ("i",), "m")
    digest = io.write(tmp_path / "f.wkc", c)
    side = json.loads(io.sidecar_path(tmp_path / "f.wkc").read_text())
    assert side["content_sha256"] == digest == io.content_hash((tmp_path / "f.wkc").read_bytes())
    assert side["config_hash"] == "abc" and "written" in side
    assert np.array_equal(io.read(tmp_path / "f.wkc")["x"], np.arange(4.0))


def test_csv_round_trip(tmp_path):
    p = io.write_csv(tmp_path / "t.csv", {"a": [1.5, 2.0], "name": np.array(["x", "y"])}, "h1")
    assert p.read_text().startswith("# config_hash=h1\n")
    back = io.read_csv(p)
    assert np.array_equal(back["a"], [1.5, 2.0]) and list(back["name"]) == ["x", "y"]
    with pytest.raises(ValueError):
        io.write_csv(tmp_path / "u.csv", {"a": [1], "b": [1, 2]})
