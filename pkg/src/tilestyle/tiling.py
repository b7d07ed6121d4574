"""Partition an image into margin-padded blocks; map margins to feature crops.

Inner rectangles tile the image exactly; each is extracted with a surrounding
margin (clipped at real image borders) wide enough that features computed on
the padded block agree with the global computation on the inner region.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import GeometryError
from .extractor import ExtractorSpec, TapGeometry, tap_geometry


@dataclass(frozen=True)
class Rect:
    x0: int
    y0: int
    w: int
    h: int

    @property
    def x1(self) -> int:
        return self.x0 + self.w

    @property
    def y1(self) -> int:
        return self.y0 + self.h


@dataclass(frozen=True)
class Block:
    inner: Rect
    padded: Rect
    present_margin: tuple  # (left, top, right, bottom) actually available px


@dataclass(frozen=True)
class BlockGrid:
    image_h: int
    image_w: int
    block: int = 512
    margin: int = 256
    stride: int = 1  # deepest tap stride; block and margin must be multiples

    def __post_init__(self):
        if self.image_h < 1 or self.image_w < 1:
            raise GeometryError(f"image dims must be >= 1, got {self.image_h}x{self.image_w}")
        if self.block < self.stride:
            raise GeometryError(f"block {self.block} smaller than deepest stride {self.stride}")
        if self.block % self.stride or self.margin % self.stride:
            raise GeometryError(
                f"block {self.block} and margin {self.margin} must be multiples of the deepest stride {self.stride}")


def partition(grid: BlockGrid) -> list:
    """Row-major blocks whose inner rects tile the image exactly."""
    blocks = []
    for y0 in range(0, grid.image_h, grid.block):
        ih = min(grid.block, grid.image_h - y0)
        for x0 in range(0, grid.image_w, grid.block):
            iw = min(grid.block, grid.image_w - x0)
            left = min(grid.margin, x0)
            top = min(grid.margin, y0)
            right = min(grid.margin, grid.image_w - (x0 + iw))
            bottom = min(grid.margin, grid.image_h - (y0 + ih))
            inner = Rect(x0, y0, iw, ih)
            padded = Rect(x0 - left, y0 - top, iw + left + right, ih + top + bottom)
            blocks.append(Block(inner=inner, padded=padded,
                                present_margin=(left, top, right, bottom)))
    return blocks


def feature_inner_crop(b: Block, g: TapGeometry) -> Rect:
    """The block's inner region expressed in its own tap-feature coordinates.

    Offsets are the present margins divided by the tap stride; sizes round up
    on right/bottom edge blocks so that cropped features concatenated over the
    grid cover the full-image tap exactly.
    """
    left, top, right, bottom = b.present_margin
    s = g.stride
    if left % s or top % s or b.inner.x0 % s or b.inner.y0 % s:
        raise GeometryError(f"margin/offset ({left},{top} at {b.inner.x0},{b.inner.y0}) "
                            f"not aligned to tap stride {s}")
    return Rect(x0=left // s, y0=top // s,
                w=-(-b.inner.w // s), h=-(-b.inner.h // s))


def margin_for_exact_gradient(spec: ExtractorSpec) -> int:
    """Smallest margin making the blockwise pixel gradient exact, stride-aligned.

    Feature pixels just outside a block's inner region still contribute to
    inner pixel gradients, and those features need their own support intact,
    so the requirement is roughly twice the conv-support radius. Pooling
    windows skew support toward the right/bottom by stride-1 pixels; anchor
    alignment claws part of that back.
    """
    s = spec.deepest_stride()
    rf = spec.max_rf_radius()
    reach = rf + s - 1  # one-sided support including pooling skew
    need = rf + s * (reach // s)
    return -(-need // s) * s
