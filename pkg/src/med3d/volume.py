"""Core data carriers: volumes, label grids, and dataset domain descriptions.

A Volume is a 3D float32 grid indexed [x, y, z] with per-axis physical
spacing in millimetres.  A LabelGrid is the voxel-aligned integer annotation
for a Volume.  A DomainSpec describes one member dataset of a multi-domain
manifest.  All three are immutable by convention: operations return new
instances and never write through ``voxels``/``labels``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import NotLabelGrid

MODALITIES = ("CT", "MR", "UNKNOWN")


@dataclass
class Volume:
    """3D scalar grid with physical spacing.

    voxels:        float32 array, shape (nx, ny, nz), index order x, y, z
    spacing:       (sx, sy, sz) voxel spacing in mm, all > 0
    origin_offset: physical offset of voxel (0,0,0) in mm
    modality:      "CT", "MR", or "UNKNOWN"
    """

    voxels: np.ndarray
    spacing: tuple[float, float, float]
    origin_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    modality: str = "UNKNOWN"

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise ValueError(f"volume must be 3D, got shape {self.voxels.shape}")
        if min(self.voxels.shape) < 1:
            raise ValueError(f"grid extents must be >= 1, got {self.voxels.shape}")
        # Geometry is quantized to float32: that is the on-disk precision,
        # and it makes write/read round-trips exact.
        self.spacing = tuple(float(np.float32(s)) for s in self.spacing)
        if len(self.spacing) != 3:
            raise ValueError("spacing must have three components")
        if not all(np.isfinite(s) and s > 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive and finite, got {self.spacing}")
        self.origin_offset = tuple(float(np.float32(o)) for o in self.origin_offset)
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        if not np.isfinite(self.voxels).all():
            raise ValueError("volume contains non-finite voxels")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def with_voxels(self, voxels: np.ndarray, spacing=None) -> Volume:
        """Copy of this volume with new voxel data (and optionally spacing)."""
        return replace(self, voxels=voxels,
                       spacing=self.spacing if spacing is None else spacing)

    def equals(self, other: Volume) -> bool:
        """Exact equality of all fields (voxels compared bit-for-bit by value)."""
        return (self.shape == other.shape
                and np.array_equal(self.voxels, other.voxels)
                and self.spacing == other.spacing
                and self.origin_offset == other.origin_offset
                and self.modality == other.modality)


@dataclass
class LabelGrid:
    """Integer class annotation aligned voxel-for-voxel with a Volume."""

    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 3:
            raise ValueError(f"label grid must be 3D, got shape {self.labels.shape}")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("labels must be an integer array")
        self.class_count = int(self.class_count)
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")
        if self.labels.size and self.labels.max() >= self.class_count:
            raise ValueError(
                f"max label {self.labels.max()} >= class_count {self.class_count}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape

    def foreground(self) -> np.ndarray:
        """Boolean mask of all non-background voxels."""
        return self.labels > 0


def to_label_grid(vol: Volume, class_count: int) -> LabelGrid:
    """Interpret a loaded Volume as a LabelGrid.

    Qualifies only when every voxel is a non-negative integer below
    ``class_count``; raises NotLabelGrid otherwise.
    """
    v = vol.voxels
    rounded = np.rint(v)
    if not np.array_equal(rounded, v):
        raise NotLabelGrid("voxel values are not integers")
    labels = rounded.astype(np.int32)
    if labels.size and labels.min() < 0:
        raise NotLabelGrid("negative label values")
    if labels.size and labels.max() >= class_count:
        raise NotLabelGrid(
            f"label {int(labels.max())} >= class_count {class_count}")
    return LabelGrid(labels=labels, class_count=class_count)


@dataclass
class DomainSpec:
    """One member dataset of a multi-domain manifest.

    median_spacing is None until the normalization stage computes it; once
    set it must equal the per-axis median over the domain's case spacings.
    """

    domain_id: int
    name: str
    class_count: int
    modality: str = "UNKNOWN"
    median_spacing: tuple[float, float, float] | None = None
    cases: list[tuple[Path, Path]] = field(default_factory=list)

    def __post_init__(self):
        if self.domain_id < 0:
            raise ValueError("domain_id must be non-negative")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        self.cases = [(Path(v), Path(l)) for v, l in self.cases]

    @property
    def case_count(self) -> int:
        return len(self.cases)
