"""Patch-grid image shuffling.

An image is split into a rows×cols grid of cells and the cells are permuted.
Images are numpy arrays of shape (height, width, 3), dtype uint8. Remainder
pixels of a non-divisible dimension are folded into the last row/column of
cells, so a 10×10 image on a 3×3 grid has cell widths (3, 3, 4) and heights
(3, 3, 4).

Cells are permuted uniformly within each shape class (cells sharing the same
height and width). When the grid divides the image evenly there is a single
class and the permutation is uniform over all cells; otherwise the
restriction is what keeps the operation lossless and dimension-preserving.
The identity permutation is never rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataFormatError
from .rng import SplitMix64


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.rows * self.cols < 2:
            raise ConfigError("a 1x1 grid has nothing to shuffle")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols


#: The three configurations studied in the rows/columns/patches experiment.
PRESETS = {
    "rows4": GridSpec(rows=4, cols=1),
    "cols4": GridSpec(rows=1, cols=4),
    "patches3x3": GridSpec(rows=3, cols=3),
}


def parse_grid(text: str) -> GridSpec:
    """Parse a preset name or an explicit ROWSxCOLS string like ``3x3``."""
    if text in PRESETS:
        return PRESETS[text]
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ConfigError(
            f"grid must be one of {sorted(PRESETS)} or ROWSxCOLS, got {text!r}"
        )
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}") from exc
    return GridSpec(rows=rows, cols=cols)


def _bounds(extent: int, parts: int) -> list[tuple[int, int]]:
    """Split ``extent`` into ``parts`` intervals, remainder folded into the last."""
    base = extent // parts
    edges = [i * base for i in range(parts)] + [extent]
    return [(edges[i], edges[i + 1]) for i in range(parts)]


def cell_boxes(height: int, width: int, grid: GridSpec) -> list[tuple[int, int, int, int]]:
    """(top, bottom, left, right) for each cell, row-major order."""
    if height < grid.rows or width < grid.cols:
        raise DataFormatError(
            f"image {width}x{height} is smaller than the {grid.rows}x{grid.cols} grid"
        )
    row_bounds = _bounds(height, grid.rows)
    col_bounds = _bounds(width, grid.cols)
    return [
        (top, bottom, left, right)
        for top, bottom in row_bounds
        for left, right in col_bounds
    ]


def cell_permutation(height: int, width: int, grid: GridSpec, rng_seed: int) -> list[int]:
    """Draw the cell permutation: ``perm[i]`` is the source cell for slot ``i``.

    Shape classes are visited in ascending (cell height, cell width) order,
    all sharing one generator seeded with ``rng_seed``; within a class the
    member slots (in row-major order) receive a uniform permutation of the
    class's cells.
    """
    boxes = cell_boxes(height, width, grid)
    by_shape: dict[tuple[int, int], list[int]] = {}
    for i, (top, bottom, left, right) in enumerate(boxes):
        by_shape.setdefault((bottom - top, right - left), []).append(i)
    rng = SplitMix64(rng_seed)
    perm = list(range(len(boxes)))
    for shape in sorted(by_shape):
        members = by_shape[shape]
        sources = list(members)
        rng.shuffle(sources)
        for slot, src in zip(members, sources):
            perm[slot] = src
    return perm


def _check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise DataFormatError(
            f"expected an RGB uint8 array of shape (h, w, 3), got "
            f"shape {img.shape} dtype {img.dtype}"
        )


def apply_permutation(img: np.ndarray, grid: GridSpec, perm: list[int]) -> np.ndarray:
    """Rearrange grid cells: output slot i gets input cell perm[i]."""
    _check_image(img)
    boxes = cell_boxes(img.shape[0], img.shape[1], grid)
    if sorted(perm) != list(range(len(boxes))):
        raise ConfigError(f"not a permutation of {len(boxes)} cells: {perm}")
    out = np.empty_like(img)
    for slot, src in enumerate(perm):
        dt, db, dl, dr = boxes[slot]
        st, sb, sl, sr = boxes[src]
        if (db - dt, dr - dl) != (sb - st, sr - sl):
            raise ConfigError(f"permutation moves cell {src} into a slot of a different shape")
        out[dt:db, dl:dr] = img[st:sb, sl:sr]
    return out


def invert_permutation(perm: list[int]) -> list[int]:
    inverse = [0] * len(perm)
    for slot, src in enumerate(perm):
        inverse[src] = slot
    return inverse


def split_and_shuffle(
    img: np.ndarray, grid: GridSpec, rng_seed: int
) -> tuple[np.ndarray, list[int]]:
    """Shuffle grid cells; returns the new image and the permutation drawn."""
    _check_image(img)
    perm = cell_permutation(img.shape[0], img.shape[1], grid, rng_seed)
    return apply_permutation(img, grid, perm), perm


# --- PNG plumbing ---------------------------------------------------------


def load_image(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"cannot read image {path}: {exc}") from exc


def save_image(path: str | Path, img: np.ndarray) -> None:
    _check_image(img)
    Image.fromarray(img, mode="RGB").save(path, format="PNG")


def write_shuffle_manifest(
    path: str | Path, records: list[dict], provenance: dict | None = None
) -> None:
    """Per-image permutation log so any shuffle run can be reproduced."""
    payload = {"images": records}
    if provenance is not None:
        payload["provenance"] = provenance
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
