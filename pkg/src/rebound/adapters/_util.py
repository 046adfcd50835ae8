"""Shared parsing/validation helpers for the dataset adapters."""
from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np

from ..errors import ConversionError, LogValidationError
from ..store import validate_bundle
from ..types import LogBundle, Quaternion

# quaternions this far from unit are data corruption, closer is rounding
NORM_ERROR_LIMIT = 1e-3


def parse_quaternion(values, *, where: str) -> Quaternion:
    """Read (w, x, y, z), normalizing small drift, rejecting corruption."""
    q = Quaternion(float(values[0]), float(values[1]), float(values[2]), float(values[3]))
    err = abs(q.norm() - 1.0)
    if err > NORM_ERROR_LIMIT:
        raise ConversionError(f"{where}: rotation norm {q.norm():.6g} is not a unit quaternion")
    if err > 1e-9:
        warnings.warn(f"{where}: rotation normalized (norm error {err:.3g})", stacklevel=3)
    return q.normalized()


def pose_to_matrix(translation, rotation: Quaternion) -> list[float]:
    """Row-major 4x4 from a rigid transform."""
    from ..geometry import quat_to_matrix

    m = np.eye(4)
    m[:3, :3] = quat_to_matrix(rotation)
    m[:3, 3] = np.asarray(translation, dtype=float)
    return [float(v) for v in m.reshape(-1)]


def matrix_to_pose(values, *, where: str):
    """Row-major 4x4 back to (translation, rotation); validates rigidity."""
    from ..geometry import quat_from_matrix

    m = np.asarray([float(v) for v in values], dtype=float).reshape(4, 4)
    r = m[:3, :3]
    if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
        raise ConversionError(f"{where}: pose matrix is not a rigid transform")
    translation = (float(m[0, 3]), float(m[1, 3]), float(m[2, 3]))
    return translation, quat_from_matrix(r)


def require_file(path: Path, *, where: str) -> Path:
    if not path.is_file():
        raise ConversionError(f"{where}: missing file {path}")
    return path


def finish_import(bundle: LogBundle) -> LogBundle:
    """Validate an imported bundle, surfacing violations as conversion errors."""
    violations = validate_bundle(bundle)
    if violations:
        raise ConversionError(str(LogValidationError(violations)))
    return bundle
