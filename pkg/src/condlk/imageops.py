"""Multi-channel images, sampling grids, bilinear sampling and dense LBP."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import WrongChannelCount
from .warp import WarpParams, warp_points_batch


@dataclass(frozen=True, eq=False)
class MultiChannelImage:
    """An immutable ``(height, width, K)`` raster with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3:
            raise ValueError("image data must be (H, W) or (H, W, K)")
        if not np.all(np.isfinite(d)) or d.min(initial=0.0) < 0.0 or d.max(initial=0.0) > 1.0:
            raise ValueError("image values must be finite and within [0, 1]")
        d = np.ascontiguousarray(d)
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def load_image(path) -> MultiChannelImage:
    """Load an 8-bit grayscale PGM (P5) or PNG as a K=1 image scaled by 1/255."""
    from PIL import Image

    with Image.open(Path(path)) as im:
        if im.mode not in ("L", "P", "RGB", "RGBA", "LA", "I;16", "I"):
            raise ValueError(f"unsupported image mode {im.mode}")
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return MultiChannelImage(arr / 255.0)


def default_image_path() -> Path:
    """The bundled test image (NASA astronaut portrait, grayscale, 256x256)."""
    return Path(__file__).parent / "data" / "astronaut_gray.png"


@dataclass(frozen=True, eq=False)
class SamplingGrid:
    """Ordered template-frame sample sites ``x_1 ... x_D``."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=np.float64).reshape(-1, 2)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def box(cls, height: int = 20, width: int = 20, centered: bool = False) -> "SamplingGrid":
        """Pixel centers of a ``height x width`` box, row-major.

        With ``centered`` the template-frame origin sits at the box center,
        otherwise at its top-left pixel.
        """
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        if centered:
            xs -= (width - 1) / 2.0
            ys -= (height - 1) / 2.0
        return cls(np.stack([xs.ravel(), ys.ravel()], axis=1))

    @property
    def D(self) -> int:
        return self.coords.shape[0]

    def corners(self) -> np.ndarray:
        """The four corners of the grid's bounding box, clockwise from top-left."""
        (x0, y0), (x1, y1) = self.coords.min(axis=0), self.coords.max(axis=0)
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def to_dict(self) -> dict:
        return {"coords": self.coords.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingGrid":
        return cls(np.asarray(d["coords"], dtype=np.float64))

    def __eq__(self, other):
        return isinstance(other, SamplingGrid) and np.array_equal(self.coords, other.coords)


def sample_points(img: MultiChannelImage, pts) -> np.ndarray:
    """Bilinear samples at (M, 2) points -> (M, K)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    return kernels.bilinear(img.data, pts[:, 0], pts[:, 1])


def sample_bilinear(img: MultiChannelImage, x) -> np.ndarray:
    return sample_points(img, np.asarray(x, dtype=np.float64).reshape(1, 2))[0]


def sample_warped_batch(img: MultiChannelImage, family, params, grid: SamplingGrid) -> np.ndarray:
    """Feature vectors for a (B, P) batch of warps -> (B, K*D), channels contiguous per site."""
    params = np.asarray(params, dtype=np.float64).reshape(-1, family.P)
    pts = warp_points_batch(family, params, grid.coords)
    b = params.shape[0]
    vals = sample_points(img, pts.reshape(-1, 2))
    return vals.reshape(b, grid.D * img.channels)


def sample_warped_vector(img: MultiChannelImage, wp: WarpParams, grid: SamplingGrid) -> np.ndarray:
    return sample_warped_batch(img, wp.family, wp.p[None], grid)[0]


def finite_diff_gradients(img: MultiChannelImage, grid: SamplingGrid, wp: WarpParams | None = None) -> np.ndarray:
    """Central-difference template gradients, (K*D, 2).

    Row ``d*K + k`` holds ``(dT_k/dx, dT_k/dy)`` at site ``d``.  The template
    is ``img`` seen through ``wp`` (identity when omitted), and the differences
    are taken one template-frame pixel apart.
    """
    k = img.channels
    c = grid.coords

    def at(offset):
        pts = c + offset
        if wp is not None:
            pts = warp_points_batch(wp.family, wp.p[None], pts)[0]
        return sample_points(img, pts)

    gx = (at([1.0, 0.0]) - at([-1.0, 0.0])) / 2.0
    gy = (at([0.0, 1.0]) - at([0.0, -1.0])) / 2.0
    return np.stack([gx.reshape(grid.D * k), gy.reshape(grid.D * k)], axis=1)


def lbp_transform(gray: MultiChannelImage) -> MultiChannelImage:
    """Dense 8-channel binary LBP planes of a grayscale image."""
    if gray.channels != 1:
        raise WrongChannelCount(f"LBP needs a single-channel image, got K={gray.channels}")
    smooth = kernels.box3(gray.data[:, :, 0])
    return MultiChannelImage(kernels.lbp_compare(smooth))


def adjust_lighting(img: MultiChannelImage, gain: float, bias: float) -> MultiChannelImage:
    """Global gain/bias, clipped back into [0, 1]."""
    return MultiChannelImage(np.clip(img.data * gain + bias, 0.0, 1.0))


def warp_image(img: MultiChannelImage, wp: WarpParams) -> MultiChannelImage:
    """Render ``img`` moved by ``wp``: output(y) = img(wp^-1(y))."""
    from .warp import invert

    inv = invert(wp)
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(np.float64)
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    src = warp_points_batch(inv.family, inv.p[None], pts)[0]
    vals = sample_points(img, src).reshape(img.height, img.width, img.channels)
    return MultiChannelImage(np.clip(vals, 0.0, 1.0))
