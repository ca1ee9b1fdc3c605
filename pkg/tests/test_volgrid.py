import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inrsynth.errors import FormatError, InvalidArgumentError
from inrsynth.volgrid import (MaskSet, Volume, normalize_coords, normalize_intensity, read_case, read_vol,
                              write_case, write_vol)


def test_axis_of_three_spans_endpoints():
    c = normalize_coords((3, 1, 1))
    assert c[:, 0].tolist() == [-1.0, 0.0, 1.0]


def test_degenerate_axis_maps_to_zero():
    c = normalize_coords((1, 1, 1))
    assert c.tolist() == [[0.0, 0.0, 0.0]]


def test_two_by_two_by_one_enumeration():
    c = normalize_coords((2, 2, 1))
    assert c.tolist() == [[-1, -1, 0], [1, -1, 0], [-1, 1, 0], [1, 1, 0]]


@pytest.mark.parametrize("dims", [(0, 2, 2), (2, -1, 2), (2, 2, 0)])
def test_bad_dims_rejected(dims):
    with pytest.raises(InvalidArgumentError):
        normalize_coords(dims)


@given(st.tuples(*[st.integers(1, 6)] * 3))
def test_coords_layout_and_reversal_symmetry(dims):
    dx, dy, dz = dims
    c = normalize_coords(dims)
    assert len(c) == dx * dy * dz
    assert np.abs(c).max() <= 1.0
    grid = c.reshape(dz, dy, dx, 3)
    # voxel (x, y, z) at linear index x + dx*(y + dy*z)
    for k in (0, len(c) - 1, len(c) // 2):
        z, rem = divmod(k, dx * dy)
        y, x = divmod(rem, dx)
        assert np.array_equal(grid[z, y, x], c[k])
    np.testing.assert_allclose(grid[:, :, ::-1, 0], -grid[:, :, :, 0], atol=1e-15)
    np.testing.assert_allclose(grid[:, ::-1, :, 1], -grid[:, :, :, 1], atol=1e-15)
    np.testing.assert_allclose(grid[::-1, :, :, 2], -grid[:, :, :, 2], atol=1e-15)


def test_zero_volume_round_trip_bytes(tmp_path):
    v = Volume(np.zeros((1, 2, 2), np.float32), (1.5, 1.5, 8.0))
    p = tmp_path / "z.vol"
    write_vol(p, v)
    first = p.read_bytes()
    back = read_vol(p)
    write_vol(tmp_path / "again.vol", back)
    assert (tmp_path / "again.vol").read_bytes() == first
    assert back.dims == (2, 2, 1) and back.spacing == (1.5, 1.5, 8.0)


def test_header_layout(tmp_path):
    v = Volume(np.arange(6, dtype=np.float32).reshape(1, 2, 3), (1.0, 2.0, 3.0))
    p = tmp_path / "h.vol"
    write_vol(p, v)
    raw = p.read_bytes()
    assert raw[:8] == b"VOL1\0\0\0\0"
    assert np.frombuffer(raw[8:20], "<u4").tolist() == [3, 2, 1]
    assert np.frombuffer(raw[20:44], "<f8").tolist() == [1.0, 2.0, 3.0]
    assert raw[44] == 0
    assert np.frombuffer(raw[45:], "<f4").tolist() == list(range(6))


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.vol"
    write_vol(p, Volume(np.zeros((1, 2, 2), np.float32)))
    raw = bytearray(p.read_bytes())
    raw[:4] = b"VOL2"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as exc:
        read_vol(p)
    assert exc.value.field == "magic"


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.vol"
    write_vol(p, Volume(np.zeros((2, 3, 4), np.float32)))
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(FormatError) as exc:
        read_vol(p)
    assert exc.value.field == "payload"
    assert "truncated" in str(exc.value)


def test_mask_payload_mismatch(tmp_path):
    p = tmp_path / "m.vol"
    write_vol(p, Volume(np.zeros((1, 2, 2), np.uint8)))
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        read_vol(p)


@settings(max_examples=40, deadline=None)
@given(
    st.tuples(*[st.integers(1, 5)] * 3),
    st.tuples(*[st.floats(0.1, 20.0)] * 3),
    st.integers(0, 2**32 - 1),
)
def test_round_trip_property(tmp_path_factory, dims, spacing, seed):
    dx, dy, dz = dims
    rng = np.random.default_rng(seed)
    d = tmp_path_factory.mktemp("rt")
    vol = Volume(rng.random((dz, dy, dx), dtype=np.float32), spacing)
    masks = MaskSet(rng.integers(0, 2, (dz, dy, dx)), rng.integers(0, 2, (dz, dy, dx)), spacing)
    write_case(str(d / "c"), vol, masks)
    v2, m2 = read_case(str(d / "c"))
    assert v2.dims == vol.dims and v2.spacing == vol.spacing
    assert v2.data.tobytes() == vol.data.tobytes()
    assert np.array_equal(m2.myo, masks.myo) and np.array_equal(m2.fib, masks.fib)


def test_mask_values_must_be_binary():
    with pytest.raises(InvalidArgumentError):
        MaskSet(np.full((1, 2, 2), 2), np.zeros((1, 2, 2)))


def test_normalize_intensity_range(rng):
    v = Volume(rng.normal(3.0, 2.0, (2, 4, 4)).astype(np.float32))
    n = normalize_intensity(v)
    assert n.data.min() == 0.0 and n.data.max() == pytest.approx(1.0)
