"""Candidate extraction: connected components of the binarized fused map.

Components use 8-connectivity (diagonal neighbors join). Ordering is
deterministic: components sort by the (min row, min col) of their pixel
sets, so candidate indices are reproducible across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import BoundingBox
from .grid import BinaryMask, ScalarGrid

_EIGHT_CONNECTED = np.ones((3, 3), dtype=np.int32)


@dataclass(frozen=True, eq=False)
class CandidateRegion:
    """One connected component with its screening descriptors.

    ``pixels`` is an (N, 2) int array of (x, y) coordinates in raster
    order. ``overlap_with_control`` is the fraction of the component
    lying inside the organ control region.
    """

    id: int
    pixels: np.ndarray
    area: int
    centroid: tuple[float, float]
    mean_prob: float
    bbox: BoundingBox
    overlap_with_control: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
            raise ValueError(f"pixels must be a non-empty (N, 2) array, got shape {arr.shape}")
        if self.area != arr.shape[0]:
            raise ValueError(f"area {self.area} disagrees with {arr.shape[0]} pixels")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)


def connected_components(mask: BinaryMask) -> list[np.ndarray]:
    """Partition the true pixels into maximal 8-connected components.

    Returns one (N, 2) array of (x, y) coordinates per component, each
    in raster order, components ordered by (min y, then min x).
    """
    labeled, n = ndimage.label(mask.bits, structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    flat = labeled.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_labels = flat[order]
    starts = np.searchsorted(sorted_labels, np.arange(1, n + 1), side="left")
    ends = np.searchsorted(sorted_labels, np.arange(1, n + 1), side="right")

    width = mask.width
    comps = []
    for s, e in zip(starts, ends):
        idx = order[s:e]
        ys, xs = idx // width, idx % width
        comps.append(np.column_stack([xs, ys]))
    # Raster order within each component comes free from argsort over the
    # raveled array; order the components themselves by extremal coords.
    comps.sort(key=lambda c: (int(c[:, 1].min()), int(c[:, 0].min()), int(c[0, 1]), int(c[0, 0])))
    return comps


def filter_min_area(components: list[np.ndarray], min_area: int) -> list[np.ndarray]:
    """Keep components whose pixel count is >= min_area (inclusive)."""
    if min_area < 0:
        raise ValueError(f"min_area must be >= 0, got {min_area}")
    return [c for c in components if c.shape[0] >= min_area]


def describe(
    component: np.ndarray,
    ordinal: int,
    fused: ScalarGrid,
    control_mask: BinaryMask,
) -> CandidateRegion:
    """Populate the descriptors used by the statistical screen and gates."""
    xs, ys = component[:, 0], component[:, 1]
    if xs.min() < 0 or ys.min() < 0 or xs.max() >= fused.width or ys.max() >= fused.height:
        raise ValueError("component pixels fall outside the grid")
    if control_mask.frame != fused.frame:
        raise ValueError(f"control mask {control_mask.frame} does not match grid {fused.frame}")
    area = int(component.shape[0])
    probs = fused.values[ys, xs]
    inside = int(np.count_nonzero(control_mask.bits[ys, xs]))
    return CandidateRegion(
        id=ordinal,
        pixels=component,
        area=area,
        centroid=(float(xs.mean()), float(ys.mean())),
        mean_prob=float(probs.mean()),
        bbox=BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1),
        overlap_with_control=inside / area,
    )


def candidates_to_mask(candidates: list[CandidateRegion], frame: tuple[int, int]) -> BinaryMask:
    """Union of candidate pixel sets as a mask (all-false when empty)."""
    bits = np.zeros((frame[1], frame[0]), dtype=np.bool_)
    for c in candidates:
        bits[c.pixels[:, 1], c.pixels[:, 0]] = True
    return BinaryMask(bits)
