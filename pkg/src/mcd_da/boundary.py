"""Decision-boundary rasters for 2-D models, written as CSV and binary PPM."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

PINK = (255, 182, 193)         # both heads say 0
LIGHT_GREEN = (144, 238, 144)  # both heads say 1
BLACK = (0, 0, 0)              # heads disagree
OTHER = (128, 128, 128)        # agreement on a class >= 2


@dataclass
class BoundaryRaster:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    pred_f1: np.ndarray  # [H, W], row 0 at ymax
    pred_f2: np.ndarray

    @property
    def width(self) -> int:
        return self.pred_f1.shape[1]

    @property
    def height(self) -> int:
        return self.pred_f1.shape[0]

    @property
    def disagree_pixels(self) -> int:
        return int(np.count_nonzero(self.pred_f1 != self.pred_f2))

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        xs = np.linspace(self.xmin, self.xmax, self.width)
        ys = np.linspace(self.ymax, self.ymin, self.height)
        return xs, ys

    def write_csv(self, path) -> None:
        xs, ys = self.coords()
        lines = ["x,y,pred_f1,pred_f2,agree"]
        for r, y in enumerate(ys):
            for c, x in enumerate(xs):
                a, b = int(self.pred_f1[r, c]), int(self.pred_f2[r, c])
                lines.append(f"{x!r},{y!r},{a},{b},{int(a == b)}")
        Path(path).write_text("\n".join(lines) + "\n")

    def to_ppm(self) -> bytes:
        rgb = np.empty((self.height, self.width, 3), dtype=np.uint8)
        rgb[:] = OTHER
        agree = self.pred_f1 == self.pred_f2
        rgb[agree & (self.pred_f1 == 0)] = PINK
        rgb[agree & (self.pred_f1 == 1)] = LIGHT_GREEN
        rgb[~agree] = BLACK
        header = f"P6\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + rgb.tobytes()

    def write_ppm(self, path) -> None:
        Path(path).write_bytes(self.to_ppm())


def padded_extent(points: np.ndarray, pad: float = 0.1) -> tuple[float, float, float, float]:
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    lo, hi = lo - pad * span, hi + pad * span
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def compute_raster(model, norm, extent, width: int = 300, height: int = 300) -> BoundaryRaster:
    """Evaluate both heads on a ``width x height`` grid over raw input coordinates."""
    if width < 2 or height < 2:
        raise ValueError("grid must be at least 2x2")
    xmin, xmax, ymin, ymax = extent
    xs = np.linspace(xmin, xmax, width)
    ys = np.linspace(ymax, ymin, height)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    p1, p2 = model.predict((pts - norm.mean) / norm.std)
    return BoundaryRaster(xmin, xmax, ymin, ymax, p1.reshape(height, width), p2.reshape(height, width))
