"""Dataset adapters: import/export between the native format and
dataset-style schemas.

Adapters register themselves behind one interface keyed by dataset id, so
supporting a new dataset is a single ``register`` call.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from ..errors import ConversionError
from ..types import LogBundle


@dataclass(frozen=True)
class Adapter:
    dataset_id: str
    source_tag: str  # value recorded in LogBundle.source_dataset
    import_log: Callable[[Path], LogBundle]
    export_log: Callable[[LogBundle, Path], list[str]]


_REGISTRY: dict[str, Adapter] = {}


def register(adapter: Adapter) -> None:
    if adapter.dataset_id in _REGISTRY:
        raise ValueError(f"adapter {adapter.dataset_id!r} already registered")
    _REGISTRY[adapter.dataset_id] = adapter


def get(dataset_id: str) -> Adapter:
    try:
        return _REGISTRY[dataset_id]
    except KeyError:
        raise ConversionError(
            f"unknown dataset {dataset_id!r}; available: {', '.join(available())}"
        ) from None


def available() -> list[str]:
    return sorted(_REGISTRY)


from . import argoverse, nuscenes, waymo  # noqa: E402  (self-registration)

from .argoverse import export_argoverse_style, import_argoverse_style  # noqa: E402
from .nuscenes import export_nuscenes_style, import_nuscenes_style  # noqa: E402
from .waymo import export_waymo_style, import_waymo_style  # noqa: E402

__all__ = [
    "Adapter",
    "available",
    "export_argoverse_style",
    "export_nuscenes_style",
    "export_waymo_style",
    "get",
    "import_argoverse_style",
    "import_nuscenes_style",
    "import_waymo_style",
    "register",
]
