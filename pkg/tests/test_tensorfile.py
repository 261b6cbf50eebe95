import json
import struct

import numpy as np
import pytest

from uqinit.tensorfile import TensorFileError, dumps, load, loads, save


def sample(rng):
    return {
        "w": rng.standard_normal((3, 4)).astype(np.float32),
        "h": rng.standard_normal(4),
        "codes": rng.integers(0, 4, size=(2, 2)).astype(np.int32),
        "perm": np.arange(5, dtype=np.int64),
        "scalar": np.array(2.5),
        "empty": np.zeros((0, 3)),
    }


def header_of(blob):
    (n,) = struct.unpack("<Q", blob[:8])
    return n, json.loads(blob[8 : 8 + n])


def test_round_trip(rng, tmp_path):
    t = sample(rng)
    save(tmp_path / "a.bin", t, {"note": "x"})
    got, meta = load(tmp_path / "a.bin")
    assert meta == {"note": "x"}
    assert set(got) == set(t)
    for k in t:
        assert got[k].dtype == t[k].dtype and got[k].shape == t[k].shape
        np.testing.assert_array_equal(got[k], t[k])
    assert not (tmp_path / "a.bin.tmp").exists()


def test_byte_identity(rng):
    blob = dumps(sample(rng), {"b": "2", "a": "1"})
    assert dumps(*loads(blob)) == blob


def test_layout(rng):
    blob = dumps({"b": np.ones(2), "a": np.zeros(3, dtype=np.float32)})
    n, header = header_of(blob)
    assert n % 8 == 0
    assert header["a"] == {"dtype": "F32", "shape": [3], "data_offsets": [0, 12]}
    assert header["b"] == {"dtype": "F64", "shape": [2], "data_offsets": [12, 28]}
    assert len(blob) == 8 + n + 28


def forge(header, payload=b""):
    text = json.dumps(header).encode()
    return struct.pack("<Q", len(text)) + text + payload


@pytest.mark.parametrize(
    "blob, msg",
    [
        (b"\x01\x02", "too short"),
        (struct.pack("<Q", 999) + b"{}", "exceeds"),
        (struct.pack("<Q", 3) + b"{x]", "JSON"),
        (forge([1, 2]), "object"),
        (forge({"a": {"dtype": "F16", "shape": [1], "data_offsets": [0, 2]}}, b"\0\0"), "unknown"),
        (forge({"a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]}}, b"\0" * 4), "out of bounds"),
        (forge({"a": {"dtype": "F32", "shape": [3], "data_offsets": [0, 8]}}, b"\0" * 8), "does not match"),
        (forge({"a": {"dtype": "F32", "shape": [-1], "data_offsets": [0, 0]}}), "negative"),
        (forge({"a": {"dtype": "F32", "shape": "x", "data_offsets": [0, 0]}}), "malformed"),
        (
            forge(
                {
                    "a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
                    "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]},
                },
                b"\0" * 12,
            ),
            "overlap",
        ),
    ],
)
def test_malformed(blob, msg):
    with pytest.raises(TensorFileError, match=msg):
        loads(blob)


def test_write_errors():
    with pytest.raises(TensorFileError, match="unsupported dtype"):
        dumps({"a": np.ones(2, dtype=np.float16)})
    with pytest.raises(TensorFileError, match="reserved"):
        dumps({"__metadata__": np.ones(1)})


def test_missing_file(tmp_path):
    with pytest.raises(TensorFileError, match="cannot read"):
        load(tmp_path / "nope.bin")


def test_safetensors_interop(rng, tmp_path):
    st = pytest.importorskip("safetensors.numpy")
    t = {k: v for k, v in sample(rng).items() if k != "scalar"}
    save(tmp_path / "ours.bin", t, {"k": "v"})
    theirs = st.load_file(str(tmp_path / "ours.bin"))
    for k in t:
        np.testing.assert_array_equal(theirs[k], t[k])
    st.save_file(t, str(tmp_path / "theirs.bin"), metadata={"k": "v"})
    got, meta = load(tmp_path / "theirs.bin")
    assert meta == {"k": "v"}
    for k in t:
        np.testing.assert_array_equal(got[k], t[k])


def test_conversion_shim(rng, tmp_path):
    import importlib.util
    import pathlib

    st = pytest.importorskip("safetensors.numpy")
    path = pathlib.Path(__file__).parents[1] / "scripts" / "convert_safetensors.py"
    spec = importlib.util.spec_from_file_location("convert_safetensors", path)
    shim = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(shim)

    half = rng.standard_normal((3, 5)).astype(np.float16)
    st.save_file({"half": half, "full": np.arange(4.0)}, str(tmp_path / "in.st"))
    assert shim.convert(tmp_path / "in.st", tmp_path / "out.bin") == ["full", "half"]
    got, _ = load(tmp_path / "out.bin")
    assert got["half"].dtype == np.float32
    np.testing.assert_array_equal(got["half"], half.astype(np.float32))
    np.testing.assert_array_equal(got["full"], np.arange(4.0))

    # bfloat16: build the file by hand from the top halves of float32 words
    vals = np.array([1.0, -2.5, 0.15625], dtype=np.float32)
    raw = (vals.view(np.uint32) >> 16).astype("<u2").tobytes()
    header = json.dumps({"b": {"dtype": "BF16", "shape": [3], "data_offsets": [0, len(raw)]}}).encode()
    (tmp_path / "bf.st").write_bytes(struct.pack("<Q", len(header)) + header + raw)
    shim.convert(tmp_path / "bf.st", tmp_path / "bf.bin")
    np.testing.assert_array_equal(load(tmp_path / "bf.bin")[0]["b"], vals)
