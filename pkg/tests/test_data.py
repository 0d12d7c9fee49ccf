import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import small_model
from nofe.data import (
    CosineField,
    SyntheticSpec,
    export_grid,
    gen_synthetic,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
    synthetic_fields,
    write_grid_csv,
)
from nofe.errors import FileFormatError, LayoutError, ShapeError, TruncatedError, ValidationError, VersionError
from nofe.graph import build_knn_graph
from nofe.model import dual_from_point, forward
from nofe.training import TrainConfig


SPEC = SyntheticSpec(d_f=4, n_points=50, n_samples=3)


def test_gen_deterministic():
    a, b = gen_synthetic(SPEC, 5), gen_synthetic(SPEC, 5)
    for sa, sb in zip(a, b):
        assert sa.coords.tobytes() == sb.coords.tobytes()
        assert sa.values.tobytes() == sb.values.tobytes()
        assert sa.sample_id == sb.sample_id
    assert not np.array_equal(a[0].values, gen_synthetic(SPEC, 6)[0].values)
    assert [s.sample_id for s in a] == ["s0000", "s0001", "s0002"]
    assert all(np.all((s.coords >= 0) & (s.coords <= 1)) for s in a)


def test_constant_field():
    f = CosineField(np.ones((1, 1)), np.zeros((1, 1, 2)), np.zeros((1, 1)))
    np.testing.assert_array_equal(f(np.random.default_rng(0).uniform(size=(10, 2))), 1.0)


def test_fields_match_samples():
    fields = synthetic_fields(SPEC, 9)
    for f, s in zip(fields, gen_synthetic(SPEC, 9)):
        np.testing.assert_array_equal(f(s.coords), s.values)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lipschitz_bound_holds(seed):
    f = synthetic_fields(SyntheticSpec(d_f=3, n_samples=1), seed)[0]
    r = np.random.default_rng(seed)
    a, b = r.uniform(size=(1000, 2)), r.uniform(size=(1000, 2))
    diff = np.abs(f(a) - f(b))
    dist = np.linalg.norm(a - b, axis=1)[:, None]
    assert np.all(diff <= f.lipschitz_bounds() * dist + 1e-12)


def test_spec_validation():
    with pytest.raises(ValidationError):
        SyntheticSpec(d_f=0)
    with pytest.raises(ValidationError):
        SyntheticSpec(amplitude=-1.0)


def test_dataset_round_trip(tmp_path):
    data = gen_synthetic(SPEC, 1)
    save_dataset(data, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert len(back) == 3
    for a, b in zip(data, back):
        assert a.coords.tobytes() == b.coords.tobytes()
        assert a.values.tobytes() == b.values.tobytes()
        assert a.sample_id == b.sample_id


def test_dataset_truncated(tmp_path):
    save_dataset(gen_synthetic(SPEC, 1), tmp_path / "ds")
    blob = tmp_path / "ds.bin"
    blob.write_bytes(blob.read_bytes()[:-1])
    with pytest.raises(TruncatedError):
        load_dataset(tmp_path / "ds")


def edit_manifest(path, **changes):
    m = json.loads(path.read_text())
    m.update(changes)
    path.write_text(json.dumps(m))


def test_dataset_shape_mismatch(tmp_path):
    save_dataset(gen_synthetic(SPEC, 1), tmp_path / "ds")
    edit_manifest(tmp_path / "ds.json", d_f=3)
    with pytest.raises(ShapeError):
        load_dataset(tmp_path / "ds")


def test_dataset_extra_bytes(tmp_path):
    save_dataset(gen_synthetic(SPEC, 1), tmp_path / "ds")
    blob = tmp_path / "ds.bin"
    blob.write_bytes(blob.read_bytes() + b"\0" * 8)
    with pytest.raises(ShapeError):
        load_dataset(tmp_path / "ds")


def test_dataset_version(tmp_path):
    save_dataset(gen_synthetic(SPEC, 1), tmp_path / "ds")
    edit_manifest(tmp_path / "ds.json", version=99)
    with pytest.raises(VersionError):
        load_dataset(tmp_path / "ds")


def test_error_kinds_are_distinct():
    kinds = {VersionError, TruncatedError, ShapeError, LayoutError}
    assert all(issubclass(k, FileFormatError) for k in kinds)
    assert len(kinds) == 4


def test_checkpoint_round_trip(tmp_path, rng):
    p = small_model()
    save_checkpoint(p, tmp_path / "m", TrainConfig(epochs=3), seed=11)
    q, manifest = load_checkpoint(tmp_path / "m")
    assert q.config == p.config
    for name in p.names():
        assert p[name].tobytes() == q[name].tobytes()
    assert manifest["seed"] == 11 and manifest["train_config"]["epochs"] == 3
    s = gen_synthetic(SyntheticSpec(d_f=3, n_points=40, n_samples=1), 0)[0]
    g = build_knn_graph(s, p.config.k)
    assert forward(p, g, s.values).tobytes() == forward(q, g, s.values).tobytes()


def test_dual_checkpoint_round_trip(tmp_path):
    d = dual_from_point(small_model())
    save_checkpoint(d, tmp_path / "d")
    q, _ = load_checkpoint(tmp_path / "d")
    assert q.dual
    for name in d.names():
        assert d[name].tobytes() == q[name].tobytes()


def test_checkpoint_reordered_layout(tmp_path):
    save_checkpoint(small_model(), tmp_path / "m")
    path = tmp_path / "m.ckpt.json"
    m = json.loads(path.read_text())
    m["tensors"][0], m["tensors"][1] = m["tensors"][1], m["tensors"][0]
    path.write_text(json.dumps(m))
    with pytest.raises(LayoutError):
        load_checkpoint(tmp_path / "m")


def test_checkpoint_truncated(tmp_path):
    save_checkpoint(small_model(), tmp_path / "m")
    blob = tmp_path / "m.ckpt.bin"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(TruncatedError):
        load_checkpoint(tmp_path / "m")


def test_export_single_point():
    table = export_grid(np.array([[0.3, 0.4]]), np.array([[2.5, -1.0]]), 3)
    assert table.shape == (9, 4)
    np.testing.assert_array_equal(table[:, 2:], np.tile([2.5, -1.0], (9, 1)))


def test_export_corners():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    z = np.array([[1.0], [2.0], [3.0], [4.0]])
    table = export_grid(coords, z, 2)
    np.testing.assert_array_equal(table[:, :2], [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    np.testing.assert_array_equal(table[:, 2], [1.0, 2.0, 3.0, 4.0])


def test_export_errors():
    with pytest.raises(ValidationError):
        export_grid(np.zeros((3, 3)), np.zeros((3, 1)), 4)
    with pytest.raises(ValidationError):
        export_grid(np.zeros((3, 2)), np.zeros((3, 1)), 1)


def test_write_grid_csv(tmp_path):
    table = export_grid(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([[1.0, 2.0], [3.0, 4.0]]), 2)
    write_grid_csv(tmp_path / "g.csv", table)
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "gx,gy,z_1,z_2"
    assert len(lines) == 5
