import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import write_raw
from radcopula.errors import DataError
from radcopula.volume_io import (
    Mask,
    Volume,
    extract_region,
    load_mask,
    load_volume,
    quantize,
    quantize_values,
    write_volume,
)


def test_sidecar_identity_round_trip(tmp_path):
    path = write_raw(tmp_path, "v", [0, 1, 2, 3], (2, 2, 1))
    vol = load_volume(path)
    assert vol.dims == (2, 2, 1)
    # x varies fastest on disk
    assert vol.voxels[:, :, 0].T.ravel().tolist() == [0.0, 1.0, 2.0, 3.0]
    assert vol.voxels.dtype == np.float64


def test_sidecar_short_payload_reports_size_mismatch(tmp_path):
    path = write_raw(tmp_path, "v", np.arange(8), (2, 2, 2), payload_bytes=7 * 8)
    with pytest.raises(DataError, match="size mismatch"):
        load_volume(path)


def test_missing_file_and_malformed_header(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_volume(tmp_path / "absent.json")
    (tmp_path / "bad.json").write_text('{"dims": [2, 2]}')
    (tmp_path / "bad.raw").write_bytes(b"\0" * 32)
    with pytest.raises(DataError, match="malformed header"):
        load_volume(tmp_path / "bad.json")


def test_non_finite_voxel_reports_index(tmp_path):
    vals = np.zeros(8)
    vals[5] = np.nan  # x=1, y=0, z=1 in x-fastest order
    path = write_raw(tmp_path, "v", vals, (2, 2, 2))
    with pytest.raises(DataError, match=r"\(1, 0, 1\)"):
        load_volume(path)


def test_nifti_scaling_matches_nibabel(tmp_path):
    nib = pytest.importorskip("nibabel")
    stored = np.arange(24, dtype=np.int16).reshape(2, 3, 4) - 7
    img = nib.Nifti1Image(stored, np.diag([1.5, 2.0, 2.5, 1.0]))
    img.header.set_data_dtype(np.int16)
    img.header.set_slope_inter(2.0, 1.0)
    for name in ("scaled.nii", "scaled.nii.gz"):
        path = tmp_path / name
        nib.save(img, path)
        ours = load_volume(path, "T1")
        oracle = np.asarray(nib.load(path).get_fdata(), dtype=np.float64)
        np.testing.assert_array_equal(ours.voxels, oracle)
        np.testing.assert_array_equal(ours.voxels, 2.0 * stored + 1.0)
        assert ours.spacing == (1.5, 2.0, 2.5)
        assert ours.modality == "T1"


def test_nifti_truncated_payload(tmp_path):
    nib = pytest.importorskip("nibabel")
    path = tmp_path / "v.nii"
    nib.save(nib.Nifti1Image(np.zeros((4, 4, 4), np.float32), np.eye(4)), path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(DataError, match="size mismatch"):
        load_volume(path)


def test_write_then_load_is_bit_exact(tmp_path, rng):
    vox = rng.normal(size=(5, 4, 3)) * 1e3
    vol = Volume(vox, (0.9, 1.1, 3.0), "FLAIR")
    back = load_volume(write_volume(vol, tmp_path / "v.json"))
    assert back.dims == vol.dims and back.spacing == vol.spacing and back.modality == "FLAIR"
    assert back.voxels.tobytes() == vol.voxels.tobytes()
    mask = Mask(rng.choice([0, 1, 2, 4], size=(5, 4, 3)), (0.9, 1.1, 3.0))
    mback = load_mask(write_volume(mask, tmp_path / "m.json"))
    np.testing.assert_array_equal(mback.labels, mask.labels)


def test_mask_rejects_unknown_labels():
    with pytest.raises(DataError, match="outside"):
        Mask(np.full((2, 2, 1), 3))


def test_extract_region_examples():
    vol = Volume(np.arange(9, dtype=float).reshape(3, 3, 1, order="F"))
    with pytest.raises(DataError, match="empty region"):
        extract_region(vol, Mask(np.zeros((3, 3, 1))), "WT")
    one = np.zeros((3, 3, 1))
    one[2, 1, 0] = 4
    r = extract_region(vol, Mask(one), "ET")
    assert r.coords.tolist() == [[2, 1, 0]] and r.values.tolist() == [5.0]
    # labels written as rows of y: x varies along each row
    lab = np.array([[0, 2, 0], [4, 0, 0], [0, 0, 1]]).T[:, :, None]
    r = extract_region(vol, Mask(lab), "WT")
    assert r.coords.tolist() == [[1, 0, 0], [0, 1, 0], [2, 2, 0]]
    assert r.values.tolist() == [1.0, 3.0, 8.0]


def test_extract_region_dims_mismatch():
    with pytest.raises(DataError, match="do not match"):
        extract_region(Volume(np.zeros((2, 2, 2))), Mask(np.zeros((2, 2, 1))), "WT")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_region_size_equals_label_count(seed):
    r = np.random.default_rng(seed)
    lab = r.choice([0, 1, 2, 4], size=(4, 3, 2))
    vol = Volume(r.normal(size=lab.shape))
    for region, labels in (("WT", (1, 2, 4)), ("ET", (4,)), ("ED", (2,)), ("NCR", (1,))):
        n = int(np.isin(lab, labels).sum())
        if n == 0:
            continue
        assert len(extract_region(vol, Mask(lab), region)) == n


def test_quantize_examples():
    assert quantize_values([0, 10], 2).tolist() == [1, 2]
    assert quantize_values([5, 5, 5], 8).tolist() == [1, 1, 1]
    assert quantize_values([0, 3, 5, 10], 4).tolist() == [1, 2, 3, 4]
    with pytest.raises(ValueError):
        quantize_values([1, 2], 1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60), st.integers(2, 64))
def test_quantize_monotone_and_spans_levels(values, ng):
    v = np.array(values)
    lev = quantize_values(v, ng)
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(lev[order]) >= 0)
    assert lev.min() >= 1 and lev.max() <= ng
    if v.max() > v.min():
        assert lev[np.argmin(v)] == 1 and lev[np.argmax(v)] == ng


def test_quantize_region_keeps_coordinates():
    vol = Volume(np.arange(8, dtype=float).reshape(2, 2, 2))
    q = quantize(extract_region(vol, Mask(np.ones((2, 2, 2))), "WT"), 4)
    assert len(q) == 8 and q.region == "WT" and q.n_levels == 4
