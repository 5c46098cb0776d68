"""Volume preprocessing: spacing normalization, intensity normalization,
crop sampling, and training-time augmentation.

Conventions used throughout (and shared with the tensor engine's upsampling):

* Resampling maps output voxel ``i`` to the source coordinate
  ``(i + 0.5) * (n_in / n_out) - 0.5`` (half-voxel-centre convention),
  clamped to the grid, so sampling never invents out-of-volume intensities
  and a size-preserving resample is the identity.
* Percentiles are nearest-rank over the sorted full voxel multiset.
* The per-axis median over an even case count is the mean of the two
  central order statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyList, NoForeground, NonPositiveTarget, RatingOutOfRange
from .volume import DomainSpec, LabelGrid, Volume


@dataclass
class IntensityStats:
    """Moments and clip bounds recorded while normalizing one volume."""

    mean: float = 0.0
    stddev: float = 0.0
    clip_low: float = 0.0
    clip_high: float = 0.0

    def __post_init__(self):
        if self.stddev < 0:
            raise ValueError("stddev must be >= 0")
        if self.clip_low > self.clip_high:
            raise ValueError("clip_low must be <= clip_high")


@dataclass
class AugmentParams:
    """Ranges for the three training augmentations.

    Translation magnitude is a fraction of the foreground bounding box
    extent per axis; rotation is about the z axis only; scaling is
    isotropic.
    """

    max_translate_frac: float = 0.10
    rotate_deg: tuple[float, float] = (-5.0, 5.0)
    scale: tuple[float, float] = (0.8, 1.2)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.max_translate_frac <= 1.0:
            raise ValueError("max_translate_frac must be in [0, 1]")
        if self.rotate_deg[0] > self.rotate_deg[1]:
            raise ValueError("rotate_deg interval is inverted")
        if self.scale[0] > self.scale[1] or self.scale[0] <= 0:
            raise ValueError("scale interval must be positive and ordered")


# --------------------------------------------------------------------------
# spacing
# --------------------------------------------------------------------------

def median_spacing(spacings: list[tuple[float, float, float]]) -> tuple[float, float, float]:
    """Per-axis median spacing over a domain's cases.

    Axes are independent; an even count takes the mean of the two middle
    values.
    """
    if not spacings:
        raise EmptyList("median over an empty spacing list")
    arr = np.asarray(spacings, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("spacings must be (sx, sy, sz) triples")
    if (arr <= 0).any():
        raise ValueError("spacings must be positive")
    med = np.median(arr, axis=0)
    return (float(med[0]), float(med[1]), float(med[2]))


def new_extent(extent: int, spacing: float, target: float) -> int:
    """Grid extent after resampling ``spacing`` -> ``target``, minimum 1.

    Preserves physical length: extent * spacing / target, rounded.
    """
    return max(1, int(round(extent * spacing / target)))


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) trilinear weights for one axis, edge-clamped."""
    if n_in == n_out:
        return np.eye(n_in)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    w_hi = src - lo
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - w_hi)
    np.add.at(mat, (rows, hi), w_hi)
    return mat


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    """Source index per output voxel for nearest-neighbour resampling."""
    if n_in == n_out:
        return np.arange(n_in)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    return np.clip(np.floor(src + 0.5).astype(np.intp), 0, n_in - 1)


def resample_to_spacing(vol: Volume, target: tuple[float, float, float],
                        mode: str = "trilinear",
                        labels: LabelGrid | None = None,
                        ) -> Volume | tuple[Volume, LabelGrid]:
    """Resample a volume (and optionally its labels) to a target spacing.

    ``mode`` applies to the volume; labels always use nearest-neighbour so
    no new class values can appear.  Output extents follow
    ``new_extent`` per axis.
    """
    if len(target) != 3 or any(t <= 0 or not np.isfinite(t) for t in target):
        raise NonPositiveTarget(f"target spacing {target}")
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown mode {mode!r}")
    out_shape = tuple(new_extent(e, s, t)
                      for e, s, t in zip(vol.shape, vol.spacing, target))

    if mode == "trilinear":
        mats = [_interp_matrix(vol.shape[ax], out_shape[ax]) for ax in range(3)]
        vox = np.einsum("xi,yj,zk,ijk->xyz", mats[0], mats[1], mats[2],
                        vol.voxels.astype(np.float64), optimize=True)
        vox = vox.astype(np.float32)
    else:
        idx = [_nearest_index(vol.shape[ax], out_shape[ax]) for ax in range(3)]
        vox = vol.voxels[np.ix_(idx[0], idx[1], idx[2])]

    out_vol = Volume(voxels=vox, spacing=target,
                     origin_offset=vol.origin_offset, modality=vol.modality)
    if labels is None:
        return out_vol
    if labels.shape != vol.shape:
        raise ValueError("labels do not match the volume extents")
    idx = [_nearest_index(vol.shape[ax], out_shape[ax]) for ax in range(3)]
    lab = labels.labels[np.ix_(idx[0], idx[1], idx[2])]
    return out_vol, LabelGrid(labels=lab, class_count=labels.class_count)


# --------------------------------------------------------------------------
# intensity
# --------------------------------------------------------------------------

def nearest_rank_percentile(values: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile of the full value multiset."""
    flat = np.sort(values, axis=None)
    rank = max(1, int(np.ceil(pct / 100.0 * flat.size)))
    return float(flat[rank - 1])


def clip_percentiles(vol: Volume, lo_pct: float = 0.5, hi_pct: float = 99.5
                     ) -> tuple[Volume, IntensityStats]:
    """Clamp intensities into the [P(lo_pct), P(hi_pct)] nearest-rank range."""
    if not (0.0 <= lo_pct < hi_pct <= 100.0):
        raise ValueError(f"need 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})")
    lo = nearest_rank_percentile(vol.voxels, lo_pct)
    hi = nearest_rank_percentile(vol.voxels, hi_pct)
    clipped = np.clip(vol.voxels, np.float32(lo), np.float32(hi))
    stats = IntensityStats(clip_low=lo, clip_high=hi)
    return vol.with_voxels(clipped), stats


_SD_FLOOR = 1e-8  # constant volumes map to all-zeros instead of dividing by 0


def zscore(vol: Volume, stats: IntensityStats | None = None
           ) -> tuple[Volume, IntensityStats]:
    """Normalize intensities to zero mean, unit population stddev.

    Moments are computed in float64; a floor on the stddev keeps constant
    volumes finite (they become all-zeros).  Pass ``stats`` to carry
    previously recorded clip bounds through into the result.
    """
    v64 = vol.voxels.astype(np.float64)
    mean = float(v64.mean())
    sd = float(v64.std())
    out = ((v64 - mean) / max(sd, _SD_FLOOR)).astype(np.float32)
    merged = IntensityStats(mean=mean, stddev=sd,
                            clip_low=stats.clip_low if stats else 0.0,
                            clip_high=stats.clip_high if stats else 0.0)
    return vol.with_voxels(out), merged


def hounsfield_window(vol: Volume, lo: float = -200.0, hi: float = 250.0) -> Volume:
    """Clamp CT intensities into a Hounsfield window."""
    if lo >= hi:
        raise ValueError(f"window must satisfy lo < hi, got ({lo}, {hi})")
    return vol.with_voxels(np.clip(vol.voxels, np.float32(lo), np.float32(hi)))


def merge_malignancy(scores: list[int]) -> str:
    """Collapse per-rater 1..5 malignancy scores to benign/malignant/excluded.

    Median rating <= 3 is benign, >= 4 malignant; a fractional median
    (possible with an even rater count) excludes the nodule.
    """
    if not scores:
        raise RatingOutOfRange("no ratings given")
    for s in scores:
        if not (isinstance(s, (int, np.integer)) and 1 <= s <= 5):
            raise RatingOutOfRange(f"rating {s!r} outside 1..5")
    med = float(np.median(np.asarray(scores, dtype=np.float64)))
    if med != int(med):
        return "excluded"
    return "benign" if med <= 3 else "malignant"


# --------------------------------------------------------------------------
# crops and augmentation
# --------------------------------------------------------------------------

def foreground_bbox(labels: LabelGrid) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive (lo, hi) corner indices of the foreground bounding box."""
    fg = labels.foreground()
    if not fg.any():
        raise NoForeground("label grid has no foreground voxels")
    coords = np.nonzero(fg)
    lo = np.array([c.min() for c in coords])
    hi = np.array([c.max() for c in coords])
    return lo, hi


def sample_training_crop(vol: Volume, labels: LabelGrid,
                         rng: np.random.Generator | int
                         ) -> tuple[Volume, LabelGrid]:
    """Random crop whose extent per axis is uniform in [2*bbox, full] and
    which fully contains the foreground bounding box."""
    rng = np.random.default_rng(rng) if isinstance(rng, int) else rng
    if labels.shape != vol.shape:
        raise ValueError("labels do not match the volume extents")
    lo, hi = foreground_bbox(labels)
    start = np.zeros(3, dtype=np.intp)
    stop = np.zeros(3, dtype=np.intp)
    for ax in range(3):
        full = vol.shape[ax]
        bbox_ext = int(hi[ax] - lo[ax] + 1)
        ext_min = min(2 * bbox_ext, full)
        ext = int(rng.integers(ext_min, full + 1))
        a_lo = max(0, int(hi[ax]) - ext + 1)
        a_hi = min(int(lo[ax]), full - ext)
        start[ax] = int(rng.integers(a_lo, a_hi + 1))
        stop[ax] = start[ax] + ext
    sl = tuple(slice(int(a), int(b)) for a, b in zip(start, stop))
    return (vol.with_voxels(vol.voxels[sl].copy()),
            LabelGrid(labels=labels.labels[sl].copy(),
                      class_count=labels.class_count))


def _affine_sample(voxels: np.ndarray, labels: np.ndarray,
                   angle_rad: float, scale: float, shift: np.ndarray):
    """Inverse-map resampling for the augmentation transform.

    The forward transform scales about the grid centre, rotates about the
    z axis, then translates; each output voxel reads the source at the
    inverse position (trilinear for intensities, nearest for labels),
    edge-clamped.
    """
    nx, ny, nz = voxels.shape
    centre = (np.array(voxels.shape, dtype=np.float64) - 1.0) / 2.0
    gx, gy, gz = np.meshgrid(np.arange(nx, dtype=np.float64),
                             np.arange(ny, dtype=np.float64),
                             np.arange(nz, dtype=np.float64), indexing="ij")
    px = gx - centre[0] - shift[0]
    py = gy - centre[1] - shift[1]
    pz = gz - centre[2] - shift[2]
    cos_t, sin_t = np.cos(angle_rad), np.sin(angle_rad)
    # inverse rotation about z, then inverse (isotropic) scale
    sx = (cos_t * px + sin_t * py) / scale + centre[0]
    sy = (-sin_t * px + cos_t * py) / scale + centre[1]
    sz = pz / scale + centre[2]

    sx = np.clip(sx, 0.0, nx - 1.0)
    sy = np.clip(sy, 0.0, ny - 1.0)
    sz = np.clip(sz, 0.0, nz - 1.0)

    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    z0 = np.floor(sz).astype(np.intp)
    x1 = np.minimum(x0 + 1, nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    z1 = np.minimum(z0 + 1, nz - 1)
    fx, fy, fz = sx - x0, sy - y0, sz - z0

    v = voxels.astype(np.float64)
    out = ((1 - fx) * (1 - fy) * (1 - fz) * v[x0, y0, z0]
           + fx * (1 - fy) * (1 - fz) * v[x1, y0, z0]
           + (1 - fx) * fy * (1 - fz) * v[x0, y1, z0]
           + (1 - fx) * (1 - fy) * fz * v[x0, y0, z1]
           + fx * fy * (1 - fz) * v[x1, y1, z0]
           + fx * (1 - fy) * fz * v[x1, y0, z1]
           + (1 - fx) * fy * fz * v[x0, y1, z1]
           + fx * fy * fz * v[x1, y1, z1])

    xn = np.clip(np.floor(sx + 0.5).astype(np.intp), 0, nx - 1)
    yn = np.clip(np.floor(sy + 0.5).astype(np.intp), 0, ny - 1)
    zn = np.clip(np.floor(sz + 0.5).astype(np.intp), 0, nz - 1)
    return out.astype(np.float32), labels[xn, yn, zn]


def augment(vol: Volume, labels: LabelGrid, params: AugmentParams
            ) -> tuple[Volume, LabelGrid]:
    """Apply one random translate/rotate/scale draw, seeded by the params.

    Translation magnitude per axis is at most max_translate_frac times the
    foreground bounding box extent on that axis; rotation is a single
    z-axis angle; scale is isotropic.
    """
    rng = np.random.default_rng(params.seed)
    lo, hi = foreground_bbox(labels)
    bbox_ext = (hi - lo + 1).astype(np.float64)
    shift = rng.uniform(-1.0, 1.0, size=3) * params.max_translate_frac * bbox_ext
    angle = np.deg2rad(rng.uniform(*params.rotate_deg))
    scale = rng.uniform(*params.scale)
    vox, lab = _affine_sample(vol.voxels, labels.labels, angle, scale, shift)
    return (vol.with_voxels(vox),
            LabelGrid(labels=lab, class_count=labels.class_count))


# --------------------------------------------------------------------------
# per-domain pipeline
# --------------------------------------------------------------------------

def compute_domain_median_spacing(domain: DomainSpec,
                                  spacings: list[tuple[float, float, float]]
                                  ) -> DomainSpec:
    """Fill in the domain's median spacing from its case spacings."""
    if len(spacings) != domain.case_count:
        raise ValueError("one spacing triple per case required")
    domain.median_spacing = median_spacing(spacings)
    return domain


def normalize_case(vol: Volume, labels: LabelGrid | None,
                   target_spacing: tuple[float, float, float],
                   hu_window: tuple[float, float] | None = None,
                   ) -> tuple[Volume, LabelGrid | None, IntensityStats]:
    """Spacing + intensity normalization for one case.

    Order: optional Hounsfield window (CT), resample to the domain median
    spacing, percentile clip, z-score.
    """
    if hu_window is not None:
        vol = hounsfield_window(vol, *hu_window)
    if labels is not None:
        vol, labels = resample_to_spacing(vol, target_spacing, "trilinear", labels)
    else:
        vol = resample_to_spacing(vol, target_spacing, "trilinear")
    vol, stats = clip_percentiles(vol)
    vol, stats = zscore(vol, stats)
    return vol, labels, stats
