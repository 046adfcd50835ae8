"""Reversible annotation editing on top of a loaded log.

A session owns a working copy of the bundle (single writer per log) and
applies commands strictly in order. Every applied command snapshots the
prior and posterior state of the one frame (or the vocabulary) it touches,
so undo/redo restore bit-identical state.

Editing a prediction box (ModifyBox/Relabel) promotes a corrected copy into
the ground-truth set with ``modified=True``; prediction sets themselves are
never mutated. That is the hand-off point from detector output to curated
annotation.
"""
from __future__ import annotations

import dataclasses
import os
import secrets
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Union

from .errors import EditRejected, UnknownTarget
from .geometry import Ray, ray_box_intersect
from .store import write_box_file, write_metadata_file
from .types import Box3D, LogBundle, Quaternion, Vec3

GROUND_TRUTH = "ground_truth"

ROTATION_INPUT_TOL = 1e-6


# ---------------------------------------------------------------------------
# commands

@dataclass(frozen=True)
class AddBox:
    frame_id: str
    box: Box3D


@dataclass(frozen=True)
class DeleteBox:
    frame_id: str
    instance_id: str


@dataclass(frozen=True)
class ModifyBox:
    """Replace any subset of center/size/rotation with absolute values."""

    frame_id: str
    instance_id: str
    center: Vec3 | None = None
    size: Vec3 | None = None
    rotation: Quaternion | None = None


@dataclass(frozen=True)
class Relabel:
    frame_id: str
    instance_id: str
    category: str


@dataclass(frozen=True)
class AddCategory:
    label: str


EditCommand = Union[AddBox, DeleteBox, ModifyBox, Relabel, AddCategory]


@dataclass(frozen=True)
class FilterSpec:
    """Visibility predicate over boxes; empty category set means all pass."""

    visible_categories: frozenset[str] = frozenset()
    min_confidence: float = 0.0
    max_range_m: float | None = None
    show_ground_truth: bool = True
    visible_prediction_sets: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not (0.0 <= self.min_confidence <= 1.0):
            raise EditRejected(f"min_confidence {self.min_confidence} outside [0, 1]")

    def category_passes(self, box: Box3D) -> bool:
        return not self.visible_categories or box.category in self.visible_categories

    def range_passes(self, box: Box3D) -> bool:
        return self.max_range_m is None or box.ego_distance() <= self.max_range_m


@dataclass(frozen=True)
class _Applied:
    """Undo/redo record: full pre/post snapshots of everything touched."""

    command: EditCommand
    frame_id: str | None
    pre_boxes: tuple[Box3D, ...] | None
    post_boxes: tuple[Box3D, ...] | None
    pre_vocab: tuple[str, ...] | None = None
    post_vocab: tuple[str, ...] | None = None


def _working_copy(bundle: LogBundle) -> LogBundle:
    return dataclasses.replace(
        bundle,
        annotations={fid: list(boxes) for fid, boxes in bundle.annotations.items()},
        predictions={
            name: {fid: list(boxes) for fid, boxes in per.items()}
            for name, per in bundle.predictions.items()
        },
        vocabulary=list(bundle.vocabulary),
        cameras=list(bundle.cameras),
        frames=list(bundle.frames),
        payload_map=dict(bundle.payload_map),
    )


class EditSession:
    """Single-writer editing state for one log."""

    def __init__(self, bundle: LogBundle):
        self.bundle = _working_copy(bundle)
        self._baseline = {fid: tuple(boxes) for fid, boxes in bundle.annotations.items()}
        self._baseline_vocab = tuple(bundle.vocabulary)
        self.undo_stack: list[_Applied] = []
        self.redo_stack: list[_Applied] = []
        self.selection: tuple[str, str] | None = None
        self.filter = FilterSpec(visible_prediction_sets=frozenset(bundle.predictions))
        self.dirty_frames: set[str] = set()
        self.mode: str = "horizontal"

    # -- queries ------------------------------------------------------------

    def _require_frame(self, frame_id: str) -> None:
        if frame_id not in self.bundle.annotations:
            raise UnknownTarget(f"unknown frame {frame_id!r}")

    def visible_entries(self, frame_id: str) -> list[tuple[str, Box3D]]:
        """(source, box) pairs passing the current filter; source is
        ``ground_truth`` or a prediction-set name."""
        self._require_frame(frame_id)
        spec = self.filter
        out: list[tuple[str, Box3D]] = []
        if spec.show_ground_truth:
            out.extend(
                (GROUND_TRUTH, box)
                for box in self.bundle.annotations[frame_id]
                if spec.category_passes(box) and spec.range_passes(box)
            )
        for set_name in sorted(self.bundle.predictions):
            if set_name not in spec.visible_prediction_sets:
                continue
            out.extend(
                (set_name, box)
                for box in self.bundle.predictions[set_name].get(frame_id, [])
                if spec.category_passes(box)
                and box.confidence is not None
                and box.confidence >= spec.min_confidence
                and spec.range_passes(box)
            )
        return out

    def visible_boxes(self, frame_id: str) -> list[Box3D]:
        return [box for _, box in self.visible_entries(frame_id)]

    def get_box(self, frame_id: str, instance_id: str) -> Box3D:
        """Current state of a box, ground truth shadowing predictions."""
        self._require_frame(frame_id)
        return self._find_target(frame_id, instance_id)[2]

    def select_at(self, ray: Ray, frame_id: str) -> tuple[str, float] | None:
        """Nearest visible box hit by the ray; ties break on instance_id."""
        hits = []
        for source, box in self.visible_entries(frame_id):
            t = ray_box_intersect(ray, box)
            if t is not None:
                hits.append((t, box.instance_id, source))
        if not hits:
            return None
        t, instance_id, _ = min(hits)
        return instance_id, t

    # -- command application --------------------------------------------------

    def _find_target(self, frame_id: str, instance_id: str) -> tuple[str, int, Box3D]:
        """Locate a box for editing: ground truth first, then prediction sets
        in name order. Returns (source, index, box)."""
        for i, box in enumerate(self.bundle.annotations[frame_id]):
            if box.instance_id == instance_id:
                return GROUND_TRUTH, i, box
        for set_name in sorted(self.bundle.predictions):
            for i, box in enumerate(self.bundle.predictions[set_name].get(frame_id, [])):
                if box.instance_id == instance_id:
                    return set_name, i, box
        raise UnknownTarget(f"no box {instance_id!r} in frame {frame_id!r}")

    @staticmethod
    def _checked_rotation(rotation: Quaternion) -> Quaternion:
        if abs(rotation.norm() - 1.0) > ROTATION_INPUT_TOL:
            raise EditRejected(f"rotation norm {rotation.norm():.6g} is not a unit quaternion")
        return rotation.normalized()

    def _next_gt(self, frame_id: str, command: EditCommand) -> list[Box3D]:
        """Compute the post-command ground-truth list (validates, no mutation)."""
        gt = self.bundle.annotations[frame_id]

        if isinstance(command, AddBox):
            box = command.box
            if any(b.instance_id == box.instance_id for b in gt):
                raise EditRejected(f"instance_id {box.instance_id!r} already present in frame {frame_id!r}")
            if box.category not in self.bundle.vocabulary:
                raise EditRejected(f"category {box.category!r} not in vocabulary")
            if min(box.size) <= 0.0:
                raise EditRejected(f"size {box.size} must be positive")
            if box.confidence is not None:
                raise EditRejected("ground-truth boxes cannot carry confidence")
            box = replace(box, rotation=self._checked_rotation(box.rotation), modified=True)
            return gt + [box]

        if isinstance(command, DeleteBox):
            source, index, _ = self._find_target(frame_id, command.instance_id)
            if source != GROUND_TRUTH:
                raise EditRejected(
                    f"box {command.instance_id!r} belongs to prediction set {source!r}; "
                    "predictions are pruned by filtering, not deleted"
                )
            return gt[:index] + gt[index + 1:]

        if isinstance(command, ModifyBox):
            source, index, box = self._find_target(frame_id, command.instance_id)
            new = box
            if command.center is not None:
                new = replace(new, center=tuple(float(v) for v in command.center))
            if command.size is not None:
                size = tuple(float(v) for v in command.size)
                if min(size) <= 0.0:
                    raise EditRejected(f"size {size} must be positive")
                new = replace(new, size=size)
            if command.rotation is not None:
                new = replace(new, rotation=self._checked_rotation(command.rotation))
            new = replace(new, modified=True)
            return self._placed(gt, source, index, new)

        if isinstance(command, Relabel):
            if command.category not in self.bundle.vocabulary:
                raise EditRejected(f"category {command.category!r} not in vocabulary")
            source, index, box = self._find_target(frame_id, command.instance_id)
            new = replace(box, category=command.category, modified=True)
            return self._placed(gt, source, index, new)

        raise EditRejected(f"unsupported command {command!r}")

    def _placed(self, gt: list[Box3D], source: str, index: int, new: Box3D) -> list[Box3D]:
        if source == GROUND_TRUTH:
            return gt[:index] + [new] + gt[index + 1:]
        # promotion: corrected prediction joins ground truth, confidence dropped
        promoted = replace(new, confidence=None)
        return gt + [promoted]

    def apply(self, command: EditCommand) -> None:
        if isinstance(command, AddCategory):
            label = command.label
            if not label:
                raise EditRejected("category label must be non-empty")
            if label in self.bundle.vocabulary:
                raise EditRejected(f"category {label!r} already in vocabulary")
            record = _Applied(
                command=command,
                frame_id=None,
                pre_boxes=None,
                post_boxes=None,
                pre_vocab=tuple(self.bundle.vocabulary),
                post_vocab=tuple(self.bundle.vocabulary) + (label,),
            )
            self.bundle.vocabulary.append(label)
        else:
            frame_id = command.frame_id
            self._require_frame(frame_id)
            pre = tuple(self.bundle.annotations[frame_id])
            post_list = self._next_gt(frame_id, command)
            record = _Applied(
                command=command,
                frame_id=frame_id,
                pre_boxes=pre,
                post_boxes=tuple(post_list),
            )
            self.bundle.annotations[frame_id] = post_list
            self._refresh_dirty(frame_id)
        self.undo_stack.append(record)
        self.redo_stack.clear()
        self._revalidate_selection()

    def undo(self) -> bool:
        """Invert the most recent command; False when there is none."""
        if not self.undo_stack:
            return False
        record = self.undo_stack.pop()
        self._restore(record, redo=False)
        self.redo_stack.append(record)
        return True

    def redo(self) -> bool:
        if not self.redo_stack:
            return False
        record = self.redo_stack.pop()
        self._restore(record, redo=True)
        self.undo_stack.append(record)
        return True

    def _restore(self, record: _Applied, *, redo: bool) -> None:
        if record.frame_id is not None:
            boxes = record.post_boxes if redo else record.pre_boxes
            assert boxes is not None
            self.bundle.annotations[record.frame_id] = list(boxes)
            self._refresh_dirty(record.frame_id)
        else:
            vocab = record.post_vocab if redo else record.pre_vocab
            assert vocab is not None
            self.bundle.vocabulary[:] = vocab
        self._revalidate_selection()

    def _refresh_dirty(self, frame_id: str) -> None:
        if tuple(self.bundle.annotations[frame_id]) == self._baseline[frame_id]:
            self.dirty_frames.discard(frame_id)
        else:
            self.dirty_frames.add(frame_id)

    # -- selection / filter / mode -------------------------------------------

    def _revalidate_selection(self) -> None:
        if self.selection is None:
            return
        frame_id, instance_id = self.selection
        try:
            visible = {box.instance_id for box in self.visible_boxes(frame_id)}
        except UnknownTarget:
            visible = set()
        if instance_id not in visible:
            self.selection = None

    def set_selection(self, frame_id: str, instance_id: str | None) -> None:
        if instance_id is None:
            self.selection = None
            return
        self._require_frame(frame_id)
        if instance_id not in {b.instance_id for b in self.visible_boxes(frame_id)}:
            raise EditRejected(f"box {instance_id!r} is not visible in frame {frame_id!r}")
        self.selection = (frame_id, instance_id)

    def set_filter(self, spec: FilterSpec) -> None:
        self.filter = spec
        self._revalidate_selection()

    def set_mode(self, mode: str) -> None:
        if mode not in ("horizontal", "vertical"):
            raise EditRejected(f"unknown mode {mode!r}")
        self.mode = mode

    # -- persistence -----------------------------------------------------------

    def vocabulary_dirty(self) -> bool:
        return tuple(self.bundle.vocabulary) != self._baseline_vocab

    def save(self, root: Path | str) -> list[str]:
        """Rewrite only the annotation files for dirty frames (plus metadata
        when the vocabulary changed); everything else stays byte-identical.
        Returns the relative paths written."""
        root = Path(root)
        written: list[str] = []
        token = secrets.token_hex(4)
        for frame_id in sorted(self.dirty_frames):
            final = root / "annotations" / f"{frame_id}.json"
            tmp = final.with_name(f".{final.name}.tmp-{token}")
            write_box_file(tmp, self.bundle.annotations[frame_id])
            os.replace(tmp, final)
            written.append(f"annotations/{frame_id}.json")
        if self.vocabulary_dirty():
            final = root / "metadata.json"
            tmp = final.with_name(f".metadata.json.tmp-{token}")
            write_metadata_file(self.bundle, tmp)
            os.replace(tmp, final)
            written.append("metadata.json")
        self._baseline = {fid: tuple(boxes) for fid, boxes in self.bundle.annotations.items()}
        self._baseline_vocab = tuple(self.bundle.vocabulary)
        self.dirty_frames.clear()
        return written
