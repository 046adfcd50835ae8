import json
import math
from pathlib import Path

import numpy as np
import pytest

from rebound.errors import LogLoadError, LogValidationError
from rebound.store import (
    box_from_json,
    box_to_json,
    diff_annotations,
    load_annotation_dir,
    load_log,
    load_pointcloud,
    read_rbpc,
    save_log,
    validate_log,
    write_rbpc,
)
from rebound.types import Box3D, Quaternion

from .builders import demo_bundle, random_bundle, snapshot_tree


# ---------------------------------------------------------------------------
# rbpc binary format

def test_rbpc_round_trip_exact(tmp_path):
    pts = np.array([[1.5, -2.0, 0.25, 0.5], [0.0, 0.0, 0.0, 1.0]], dtype=np.float32)
    path = tmp_path / "a.rbpc"
    write_rbpc(path, pts)
    np.testing.assert_array_equal(read_rbpc(path), pts)


def test_rbpc_header_layout(tmp_path):
    path = tmp_path / "a.rbpc"
    write_rbpc(path, np.zeros((3, 4), dtype=np.float32))
    raw = path.read_bytes()
    assert raw[:4] == b"RBPC"
    assert raw[4:6] == (1).to_bytes(2, "little")
    assert raw[6:10] == (3).to_bytes(4, "little")
    assert len(raw) == 10 + 3 * 16


@pytest.mark.parametrize(
    "mangle",
    [
        lambda raw: b"XXXX" + raw[4:],  # magic
        lambda raw: raw[:4] + (9).to_bytes(2, "little") + raw[6:],  # version
        lambda raw: raw[:-4],  # truncated
        lambda raw: raw[:6],  # short header
    ],
)
def test_rbpc_rejects_malformed(tmp_path, mangle):
    path = tmp_path / "a.rbpc"
    write_rbpc(path, np.zeros((2, 4), dtype=np.float32))
    path.write_bytes(mangle(path.read_bytes()))
    with pytest.raises(ValueError):
        read_rbpc(path)


def test_pointcloud_intensity_clamped_with_warning(tmp_path, demo_loaded, demo_log_root):
    ref = demo_loaded.frames[0].pointcloud_ref
    pts = read_rbpc(demo_log_root / ref)
    pts[0, 3] = 2.0
    write_rbpc(demo_log_root / ref, pts)
    bundle = load_log(demo_log_root)
    with pytest.warns(UserWarning, match="clamped"):
        cloud = load_pointcloud(bundle, "f1")
    assert cloud.points[:, 3].max() <= 1.0
    # source bytes untouched by loading
    assert read_rbpc(demo_log_root / ref)[0, 3] == 2.0


# ---------------------------------------------------------------------------
# load / save

def test_load_demo_log_counts(demo_loaded):
    assert len(demo_loaded.frames) == 3
    assert sum(len(v) for v in demo_loaded.annotations.values()) == 6
    assert set(demo_loaded.predictions) == {"detector", "far_detector"}


def test_save_then_load_round_trips(tmp_path, demo_loaded):
    out = tmp_path / "copy"
    save_log(demo_loaded, out)
    again = load_log(out)
    assert again == demo_loaded


def test_round_trip_randomized(tmp_path):
    rng = np.random.default_rng(42)
    for i in range(8):
        bundle = random_bundle(rng, tmp_path / f"payload{i}", log_id=f"rt{i}")
        root = tmp_path / f"log{i}"
        save_log(bundle, root)
        assert load_log(root) == bundle


def test_empty_annotation_directory_means_empty_lists(tmp_path, demo_loaded):
    root = tmp_path / "log"
    save_log(demo_loaded, root)
    for f in (root / "annotations").glob("*.json"):
        f.unlink()
    bundle = load_log(root)
    assert all(boxes == [] for boxes in bundle.annotations.values())


def test_zero_height_box_names_instance(tmp_path, demo_loaded):
    root = tmp_path / "log"
    save_log(demo_loaded, root)
    path = root / "annotations" / "f1.json"
    recs = json.loads(path.read_text())
    recs[0]["size"][2] = 0.0
    bad_id = recs[0]["instance_id"]
    path.write_text(json.dumps(recs))
    with pytest.raises(LogValidationError) as err:
        load_log(root)
    assert any(v.rule == "nonpositive_size" and v.instance_id == bad_id for v in err.value.violations)


def test_missing_metadata_names_file(tmp_path):
    with pytest.raises(LogLoadError, match="metadata.json"):
        load_log(tmp_path / "nothing_here")


def test_save_deleting_one_box_shrinks_only_that_file(tmp_path, demo_loaded):
    before = tmp_path / "before"
    after = tmp_path / "after"
    save_log(demo_loaded, before)

    edited = load_log(before)
    edited.annotations["f1"] = edited.annotations["f1"][1:]
    save_log(edited, after)

    recs_before = json.loads((before / "annotations" / "f1.json").read_text())
    recs_after = json.loads((after / "annotations" / "f1.json").read_text())
    assert len(recs_after) == len(recs_before) - 1
    for ref in [demo_loaded.frames[i].pointcloud_ref for i in range(3)]:
        assert (before / ref).read_bytes() == (after / ref).read_bytes()


def test_save_to_unwritable_path_leaves_source(tmp_path, demo_loaded):
    src = tmp_path / "src"
    save_log(demo_loaded, src)
    bundle = load_log(src)
    blocker = tmp_path / "blocker"
    blocker.write_text("file, not dir")
    with pytest.raises(OSError):
        save_log(bundle, blocker / "out")
    assert load_log(src) == bundle


def test_save_is_deterministic(tmp_path, demo_loaded):
    a, b = tmp_path / "a", tmp_path / "b"
    save_log(demo_loaded, a)
    save_log(demo_loaded, b)
    assert snapshot_tree(a) == snapshot_tree(b)


def test_save_rejects_invalid_bundle(tmp_path, demo_loaded):
    demo_loaded.annotations["f1"][0] = Box3D(
        center=(0.0, 0.0, 0.0),
        size=(1.0, 1.0, 1.0),
        rotation=Quaternion(1.2, 0.0, 0.0, 0.0),
        category="car",
        instance_id="bad",
    )
    with pytest.raises(LogValidationError):
        save_log(demo_loaded, tmp_path / "out")


# ---------------------------------------------------------------------------
# validate_log

def test_validate_clean_log(demo_log_root):
    assert validate_log(demo_log_root) == []


def test_validate_orphan_annotation_frame(tmp_path, demo_loaded):
    root = tmp_path / "log"
    save_log(demo_loaded, root)
    (root / "annotations" / "ghost.json").write_text("[]")
    violations = validate_log(root)
    assert [v.rule for v in violations] == ["unknown_frame"]


def test_validate_non_unit_quaternion(tmp_path, demo_loaded):
    root = tmp_path / "log"
    save_log(demo_loaded, root)
    path = root / "annotations" / "f2.json"
    recs = json.loads(path.read_text())
    recs[0]["rotation"] = [1.2 * v for v in recs[0]["rotation"]]
    path.write_text(json.dumps(recs))
    violations = validate_log(root)
    assert any(v.rule == "rotation_not_normalized" for v in violations)
    with pytest.raises(LogValidationError):
        load_log(root)


def _edit_json(path: Path, fn):
    data = json.loads(path.read_text())
    fn(data)
    path.write_text(json.dumps(data))


CORRUPTIONS = {
    "zero_size": ("annotations/f1.json", lambda d: d[0]["size"].__setitem__(1, 0.0)),
    "scaled_rotation": ("annotations/f1.json", lambda d: d[0].__setitem__("rotation", [0.6, 0.6, 0.6, 0.6])),
    "duplicate_instance": ("annotations/f1.json", lambda d: d.append(dict(d[0]))),
    "unknown_category": ("annotations/f1.json", lambda d: d[0].__setitem__("category", "dragon")),
    "gt_confidence": ("annotations/f1.json", lambda d: d[0].__setitem__("confidence", 0.5)),
    "pred_without_confidence": ("predictions/detector/f1.json", lambda d: d[0].pop("confidence")),
    "confidence_range": ("predictions/detector/f1.json", lambda d: d[0].__setitem__("confidence", 1.5)),
    "nan_center": ("annotations/f1.json", lambda d: d[0]["center"].__setitem__(0, float("nan"))),
    "equal_timestamps": ("frames.json", lambda d: d[1].__setitem__("timestamp", d[0]["timestamp"])),
    "duplicate_frame_id": ("frames.json", lambda d: d[1].__setitem__("frame_id", d[0]["frame_id"])),
    "bad_intrinsics": ("metadata.json", lambda d: d["cameras"][0]["intrinsic"].__setitem__("cx", 99999.0)),
    "ego_rotation": ("frames.json", lambda d: d[0]["ego_pose"].__setitem__("rotation", [2.0, 0.0, 0.0, 0.0])),
    "bad_source": ("metadata.json", lambda d: d.__setitem__("source_dataset", "mystery")),
}


@pytest.mark.parametrize("name", sorted(CORRUPTIONS))
def test_single_field_corruptions_caught(tmp_path, demo_loaded, name):
    root = tmp_path / "log"
    save_log(demo_loaded, root)
    rel, fn = CORRUPTIONS[name]
    _edit_json(root / rel, fn)
    assert validate_log(root), f"corruption {name} produced no violation"


def test_missing_pointcloud_file_caught(tmp_path, demo_loaded):
    root = tmp_path / "log"
    save_log(demo_loaded, root)
    (root / demo_loaded.frames[1].pointcloud_ref).unlink()
    violations = validate_log(root)
    assert any(v.rule == "missing_file" for v in violations)
    with pytest.raises(LogLoadError):
        load_log(root)


def test_corrupt_pointcloud_magic_caught(tmp_path, demo_loaded):
    root = tmp_path / "log"
    save_log(demo_loaded, root)
    path = root / demo_loaded.frames[0].pointcloud_ref
    raw = path.read_bytes()
    path.write_bytes(b"NOPE" + raw[4:])
    assert any(v.rule == "bad_pointcloud" for v in validate_log(root))


def test_nonfinite_point_caught(tmp_path, demo_loaded):
    root = tmp_path / "log"
    save_log(demo_loaded, root)
    ref = demo_loaded.frames[0].pointcloud_ref
    pts = read_rbpc(root / ref)
    pts[0, 0] = np.inf
    write_rbpc(root / ref, pts)
    assert any(v.rule == "nonfinite_point" for v in validate_log(root))


def test_validate_empty_iff_loadable(tmp_path, demo_loaded):
    root = tmp_path / "log"
    save_log(demo_loaded, root)
    assert validate_log(root) == []
    load_log(root)  # should not raise
    _edit_json(root / "annotations/f1.json", lambda d: d[0]["size"].__setitem__(0, -1.0))
    assert validate_log(root) != []
    with pytest.raises(LogValidationError):
        load_log(root)


# ---------------------------------------------------------------------------
# diff

def test_diff_identical_sets_empty(demo_loaded):
    report = diff_annotations(demo_loaded.annotations, demo_loaded.annotations)
    assert report.is_empty()
    assert report.summary() == "0 added, 0 removed, 0 moved, 0 relabeled"


def test_diff_detects_move(demo_loaded):
    import dataclasses

    a = demo_loaded.annotations
    b = {fid: list(boxes) for fid, boxes in a.items()}
    box = b["f1"][0]
    moved = dataclasses.replace(box, center=(box.center[0] + 0.5, box.center[1], box.center[2]))
    b["f1"] = [moved] + b["f1"][1:]
    report = diff_annotations(a, b)
    assert len(report.moved) == 1
    entry = report.moved[0]
    assert entry.instance_id == box.instance_id
    np.testing.assert_allclose(entry.center_delta, (0.5, 0.0, 0.0), atol=1e-12)
    assert not report.added and not report.removed and not report.relabeled


def test_diff_detects_relabel(demo_loaded):
    import dataclasses

    a = demo_loaded.annotations
    b = {fid: list(boxes) for fid, boxes in a.items()}
    b["f1"] = [dataclasses.replace(b["f1"][0], category="truck")] + b["f1"][1:]
    report = diff_annotations(a, b)
    assert len(report.relabeled) == 1
    assert (report.relabeled[0].old_category, report.relabeled[0].new_category) == ("car", "truck")
    assert not report.moved


def test_diff_added_removed_antisymmetric(demo_loaded):
    a = demo_loaded.annotations
    b = {fid: list(boxes) for fid, boxes in a.items()}
    b["f2"] = b["f2"][1:]
    forward = diff_annotations(a, b)
    backward = diff_annotations(b, a)
    assert len(forward.removed) == 1 and len(forward.added) == 0
    assert len(backward.added) == 1 and len(backward.removed) == 0


def test_diff_rejects_duplicate_ids(demo_loaded):
    a = demo_loaded.annotations
    b = {fid: list(boxes) for fid, boxes in a.items()}
    b["f1"] = b["f1"] + [b["f1"][0]]
    with pytest.raises(ValueError, match="duplicate instance_id"):
        diff_annotations(a, b)


def test_diff_move_threshold_is_strict(demo_loaded):
    import dataclasses

    a = demo_loaded.annotations
    b = {fid: list(boxes) for fid, boxes in a.items()}
    box = b["f1"][0]
    nudged = dataclasses.replace(box, center=(box.center[0] + 5e-7, box.center[1], box.center[2]))
    b["f1"] = [nudged] + b["f1"][1:]
    assert diff_annotations(a, b).is_empty()


def test_load_annotation_dir_round_trips(tmp_path, demo_loaded):
    root = tmp_path / "log"
    save_log(demo_loaded, root)
    loaded = load_annotation_dir(root / "annotations")
    assert set(loaded) == {"f1", "f2", "f3"}
    by_id = {b.instance_id for b in loaded["f1"]}
    assert by_id == {b.instance_id for b in demo_loaded.annotations["f1"]}


def test_box_json_round_trip_exact():
    box = Box3D(
        center=(1.23456789012345, -2.0, 0.1),
        size=(4.5, 2.0, 1.5),
        rotation=Quaternion(0.9238795325112867, 0.0, 0.0, 0.3826834323650898),
        category="car",
        instance_id="abc123",
        attributes={"parked": "true"},
        modified=True,
    )
    assert box_from_json(json.loads(json.dumps(box_to_json(box)))) == box


def test_math_constants_survive_json():
    # shortest-repr floats reload bit-exactly
    values = [math.pi, 1 / 3, 1e-15, 123456.789012345678]
    assert json.loads(json.dumps(values)) == values
