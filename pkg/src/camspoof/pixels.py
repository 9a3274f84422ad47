"""Bayer frames, demosaicing, synthetic driving scenes and the toy sign detector.

Frames travel as single-channel BayerRG8 mosaics with the red sample at
(even row, even column). Everything in this module is a pure function of its
inputs; arrays handed out by :class:`PixelBuffer` are read-only views.
"""

from __future__ import annotations

import colorsys
import enum
import functools
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy.ndimage import convolve
from scipy.signal import fftconvolve

SIGN_THRESHOLD = 0.3

PXB_MAGIC = b"PXB1"
_PXB_HEADER = struct.Struct(">4sIII")


class DimensionError(ValueError):
    """Raised when frame or template dimensions violate the Bayer/fit rules."""


class EmptyResultError(ValueError):
    """Raised when a width re-slice would produce no complete row."""


class PixelFormat(enum.IntEnum):
    BayerRG8 = 1


class SignLabel(enum.Enum):
    StopSign = "StopSign"
    RedLight = "RedLight"


def _check_even_dims(width: int, height: int) -> None:
    if width <= 0 or height <= 0:
        raise DimensionError(f"dimensions must be positive, got {width}x{height}")
    if width % 2 or height % 2:
        raise DimensionError(f"Bayer frames need even dimensions, got {width}x{height}")


@dataclass(frozen=True)
class PixelBuffer:
    """Raw BayerRG8 frame, one byte per pixel, row-major."""

    width: int
    height: int
    data: bytes
    format: PixelFormat = PixelFormat.BayerRG8

    def __post_init__(self) -> None:
        _check_even_dims(self.width, self.height)
        if len(self.data) != self.width * self.height:
            raise DimensionError(
                f"expected {self.width * self.height} bytes for {self.width}x{self.height}, "
                f"got {len(self.data)}"
            )
        object.__setattr__(self, "format", PixelFormat(self.format))

    @property
    def pixel_count(self) -> int:
        return self.width * self.height

    def array(self) -> np.ndarray:
        """Read-only ``(height, width)`` uint8 view of the mosaic."""
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.height, self.width)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "PixelBuffer":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise DimensionError(f"mosaic must be 2-D, got shape {arr.shape}")
        return cls(arr.shape[1], arr.shape[0], np.ascontiguousarray(arr, dtype=np.uint8).tobytes())

    def to_bytes(self) -> bytes:
        return _PXB_HEADER.pack(PXB_MAGIC, self.width, self.height, int(self.format)) + self.data

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PixelBuffer":
        if len(blob) < _PXB_HEADER.size:
            raise ValueError("truncated PXB header")
        magic, width, height, fmt = _PXB_HEADER.unpack_from(blob)
        if magic != PXB_MAGIC:
            raise ValueError(f"bad PXB magic {magic!r}")
        return cls(width, height, bytes(blob[_PXB_HEADER.size:]), PixelFormat(fmt))


def write_pxb(path: Union[str, Path], buf: PixelBuffer) -> None:
    Path(path).write_bytes(buf.to_bytes())


def read_pxb(path: Union[str, Path]) -> PixelBuffer:
    return PixelBuffer.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True, eq=False)
class RgbImage:
    """Demosaiced frame; ``pixels`` is an ``(height, width, 3)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionError(f"RGB image must be (h, w, 3), got {px.shape}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def gray(self) -> np.ndarray:
        r, g, b = (self.pixels[..., i].astype(np.float32) for i in range(3))
        return np.clip(np.rint(0.299 * r + 0.587 * g + 0.114 * b), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of a procedural driving scene.

    ``motion`` is the integer global translation ``(dx, dy)`` applied per frame,
    ``texture_scale`` the low-pass cutoff of the background noise in cycles per
    pixel and ``corner_density`` the number of high-contrast rectangles per
    megapixel of scene.
    """

    seed: int
    width: int
    height: int
    motion: Tuple[int, int] = (2, 1)
    texture_scale: float = 0.03
    corner_density: float = 1500.0

    def __post_init__(self) -> None:
        _check_even_dims(self.width, self.height)
        if self.corner_density <= 0:
            raise ValueError("corner_density must be positive")
        if self.texture_scale <= 0:
            raise ValueError("texture_scale must be positive")
        object.__setattr__(self, "motion", (int(self.motion[0]), int(self.motion[1])))


@dataclass(frozen=True, eq=False)
class SignTemplate:
    label: SignLabel
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionError(f"template must be (h, w, 3), got {px.shape}")
        _check_even_dims(px.shape[1], px.shape[0])
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "label", SignLabel(self.label))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


# --------------------------------------------------------------------------
# Bayer mosaic
# --------------------------------------------------------------------------

def mosaic(rgb: Union[RgbImage, np.ndarray]) -> PixelBuffer:
    """Sample an RGB image into an RGGB mosaic."""
    px = rgb.pixels if isinstance(rgb, RgbImage) else np.asarray(rgb, dtype=np.uint8)
    h, w = px.shape[:2]
    _check_even_dims(w, h)
    out = np.empty((h, w), dtype=np.uint8)
    out[0::2, 0::2] = px[0::2, 0::2, 0]
    out[0::2, 1::2] = px[0::2, 1::2, 1]
    out[1::2, 0::2] = px[1::2, 0::2, 1]
    out[1::2, 1::2] = px[1::2, 1::2, 2]
    return PixelBuffer.from_array(out)


def _bayer_masks(h: int, w: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = np.zeros((h, w), dtype=np.float64)
    b = np.zeros((h, w), dtype=np.float64)
    r[0::2, 0::2] = 1.0
    b[1::2, 1::2] = 1.0
    g = 1.0 - r - b
    return r, g, b


_K_GREEN = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4.0
_K_RED_BLUE = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4.0


def demosaic_planes(buf: PixelBuffer) -> np.ndarray:
    """Bilinear demosaic without rounding, as a float ``(h, w, 3)`` array.

    Mirror padding keeps the CFA phase at the borders, so edge pixels are
    interpolated from reflected samples of the same color.
    """
    if buf.width % 2 or buf.height % 2:
        raise DimensionError(f"odd frame {buf.width}x{buf.height}")
    raw = buf.array().astype(np.float64)
    mr, mg, mb = _bayer_masks(buf.height, buf.width)
    red = convolve(raw * mr, _K_RED_BLUE, mode="mirror")
    green = convolve(raw * mg, _K_GREEN, mode="mirror")
    blue = convolve(raw * mb, _K_RED_BLUE, mode="mirror")
    return np.stack([red, green, blue], axis=-1)


def demosaic(buf: PixelBuffer) -> RgbImage:
    """Bilinear RGGB demosaic; channels rounded half-to-even and clamped to 0..255."""
    planes = demosaic_planes(buf)
    return RgbImage(np.clip(np.rint(planes), 0, 255).astype(np.uint8))


def reinterpret_width(payload: bytes, src_width: int, dst_width: int) -> PixelBuffer:
    """Re-slice a row-major byte stream laid out at ``src_width`` at ``dst_width``.

    This is the receiver's view of injected bytes when the leader announces a
    different width than the one the content was prepared for. The trailing
    partial row is dropped, and so is a final odd row, since mosaics need an
    even height.
    """
    if src_width <= 0 or dst_width <= 0 or src_width % 2 or dst_width % 2:
        raise DimensionError(f"widths must be even and positive, got {src_width}, {dst_width}")
    if len(payload) % src_width:
        raise DimensionError(f"payload of {len(payload)} bytes is not a whole number of {src_width}-pixel rows")
    height = (len(payload) // dst_width) & ~1
    if height == 0:
        raise EmptyResultError(f"payload of {len(payload)} bytes holds no pair of {dst_width}-pixel rows")
    return PixelBuffer(dst_width, height, bytes(payload[: dst_width * height]))


# --------------------------------------------------------------------------
# Synthetic scenes
# --------------------------------------------------------------------------

def _hsv_color(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb((h % 360.0) / 360.0, s, v)) * 255.0


def _tile_size(width: int, height: int) -> int:
    size = 256
    while size < max(width, height):
        size *= 2
    return size


@functools.lru_cache(maxsize=64)
def _world_tile(seed: int, size: int, texture_scale: float, corner_density: float) -> np.ndarray:
    rng = np.random.default_rng(seed)
    hue = rng.uniform(0.0, 360.0)

    freq = np.fft.fftfreq(size)
    radius2 = freq[:, None] ** 2 + freq[None, :] ** 2
    lowpass = np.exp(-0.5 * radius2 / texture_scale**2)
    noise = np.fft.ifft2(np.fft.fft2(rng.standard_normal((3, size, size))) * lowpass).real
    noise /= noise.std(axis=(1, 2), keepdims=True)

    base = _hsv_color(hue, 0.45, 0.55)
    world = np.empty((size, size, 3), dtype=np.float64)
    world[..., 0] = base[0] + 40.0 * noise[0] + 18.0 * noise[1]
    world[..., 1] = base[1] + 40.0 * noise[0] - 9.0 * (noise[1] + noise[2])
    world[..., 2] = base[2] + 40.0 * noise[0] + 18.0 * noise[2]

    # high-contrast rectangles give the corner detector something to lock on
    n_rects = max(1, int(round(corner_density * size * size / 1e6)))
    for _ in range(n_rects):
        rh, rw = rng.integers(6, 28, size=2)
        y0, x0 = rng.integers(0, size, size=2)
        color = _hsv_color(hue + rng.uniform(-90.0, 90.0), rng.uniform(0.4, 1.0), rng.uniform(0.15, 1.0))
        rows = np.arange(y0, y0 + rh) % size
        cols = np.arange(x0, x0 + rw) % size
        world[np.ix_(rows, cols)] = color

    tile = np.clip(np.rint(world), 0, 255).astype(np.uint8)
    tile.setflags(write=False)
    return tile


def scene_rgb(scene: SceneConfig, frame_index: int, width: Optional[int] = None) -> np.ndarray:
    """RGB view of the scene at ``frame_index`` (left-aligned crop at ``width``)."""
    if frame_index < 0:
        raise ValueError("frame_index must be non-negative")
    width = scene.width if width is None else width
    _check_even_dims(width, scene.height)
    size = _tile_size(max(width, scene.width), scene.height)
    tile = _world_tile(int(scene.seed), size, float(scene.texture_scale), float(scene.corner_density))
    dx, dy = scene.motion
    rows = np.arange(scene.height) - frame_index * dy
    cols = np.arange(width) - frame_index * dx
    return tile.take(rows, axis=0, mode="wrap").take(cols, axis=1, mode="wrap")


def synth_frame(scene: SceneConfig, frame_index: int, width: Optional[int] = None) -> PixelBuffer:
    """Deterministic mosaiced frame of the procedural scene.

    Content moves by ``motion`` pixels per frame. ``width`` narrower than the
    scene crops columns from the right, which is what a camera does when its
    width register is lowered.
    """
    return mosaic(scene_rgb(scene, frame_index, width))


# --------------------------------------------------------------------------
# Sign templates and the toy recognizer
# --------------------------------------------------------------------------

_WHITE = (235, 235, 235)
_SIGN_RED = (196, 20, 32)


def _octagon_mask(size: int, inset: float) -> np.ndarray:
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    u, v = np.abs(xx - c), np.abs(yy - c)
    r = c - inset
    # regular octagon: four axis-aligned and four diagonal sides at inradius r
    return (u <= r) & (v <= r) & (u + v <= r * np.sqrt(2.0))


def make_template(label: Union[SignLabel, str], scale: int = 1) -> SignTemplate:
    """Procedural stop sign (36x36) or red traffic light (28x52), times ``scale``.

    Both carry fine internal structure (a double ring and glyphs, a striped
    backplate) so that background clutter correlates weakly with them.
    """
    label = SignLabel(label)
    if label is SignLabel.StopSign:
        size = 36
        img = np.full((size, size, 3), 128, dtype=np.uint8)
        for inset, color in [(0.5, _WHITE), (2.5, _SIGN_RED), (4.5, _WHITE), (6.0, _SIGN_RED)]:
            img[_octagon_mask(size, inset)] = color
        glyphs = [
            ["###", "#..", "###", "..#", "###"],
            ["###", ".#.", ".#.", ".#.", ".#."],
            ["###", "#.#", "#.#", "#.#", "###"],
            ["###", "#.#", "###", "#..", "#.."],
        ]
        for g, glyph in enumerate(glyphs):
            for gy, line in enumerate(glyph):
                for gx, ch in enumerate(line):
                    if ch == "#":
                        y, x = 13 + 2 * gy, 5 + 7 * g + 2 * gx
                        img[y : y + 2, x : x + 2] = (245, 245, 245)
    else:
        w, h = 28, 52
        yy, xx = np.mgrid[0:h, 0:w]
        img = np.empty((h, w, 3), dtype=np.uint8)
        stripes = ((xx + yy) // 4) % 2 == 0
        img[stripes] = (235, 200, 30)
        img[~stripes] = (20, 20, 20)
        img[4:-4, 4:-4] = (28, 28, 30)
        for k, color in enumerate([(250, 40, 30), (90, 70, 20), (20, 70, 40)]):
            cy = 12 + 14 * k
            img[(yy - cy + 0.5) ** 2 + (xx - 13.5) ** 2 <= 5.5**2] = color
        img[10:12, 11:14] = (255, 200, 190)
    if scale > 1:
        img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    return SignTemplate(label, img)


def ncc_surface(img: Union[RgbImage, np.ndarray], template: Union[SignTemplate, np.ndarray]) -> np.ndarray:
    """Normalized cross-correlation of ``template`` at every valid placement.

    Each channel is centered on its own window mean (the color-image
    convention of OpenCV's ``TM_CCOEFF_NORMED``), so the score measures spatial
    structure and is unchanged by adding a constant to any channel. Windows
    with no variance score 0.
    """
    im = (img.pixels if isinstance(img, RgbImage) else np.asarray(img)).astype(np.float64)
    tp = (template.pixels if isinstance(template, SignTemplate) else np.asarray(template)).astype(np.float64)
    th, tw = tp.shape[:2]
    if th > im.shape[0] or tw > im.shape[1]:
        raise DimensionError(f"template {tw}x{th} does not fit image {im.shape[1]}x{im.shape[0]}")
    n = th * tw
    tz = tp - tp.mean(axis=(0, 1), keepdims=True)
    tnorm = np.sqrt(np.sum(tz * tz))
    out_shape = (im.shape[0] - th + 1, im.shape[1] - tw + 1)
    if tnorm == 0:
        return np.zeros(out_shape)

    def window_sum(a: np.ndarray) -> np.ndarray:
        s = np.pad(a.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
        return s[th:, tw:] - s[:-th, tw:] - s[th:, :-tw] + s[:-th, :-tw]

    num = np.zeros(out_shape)
    var = np.zeros(out_shape)
    for c in range(3):
        # centered copy keeps the integral-image variance from cancelling
        ch = im[..., c] - im[..., c].mean()
        num += fftconvolve(ch, tz[::-1, ::-1, c], mode="valid")
        s1 = window_sum(ch)
        var += window_sum(ch * ch) - s1 * s1 / n
    floor = 1e-9 * max(float(np.max(var)), 1.0)
    ok = var > floor
    score = np.zeros(out_shape)
    score[ok] = num[ok] / (np.sqrt(var[ok]) * tnorm)
    return np.clip(score, -1.0, 1.0)


def toy_sign_detect(
    img: RgbImage,
    template: SignTemplate,
    stride: int = 1,
    rows: Optional[Tuple[int, int]] = None,
) -> float:
    """Best normalized correlation of ``template`` over ``img``.

    ``rows`` restricts the search to placements whose top row lies in
    ``[rows[0], rows[1])``; ``stride`` subsamples placements. A sign counts as
    recognized when the score reaches :data:`SIGN_THRESHOLD`.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    px = img.pixels
    if rows is not None:
        top = max(0, rows[0])
        bottom = min(px.shape[0], rows[1] + template.height - 1)
        px = px[top:bottom]
    surface = ncc_surface(px, template)[::stride, ::stride]
    return float(surface.max()) if surface.size else 0.0


def paste(rgb: np.ndarray, template: SignTemplate, row: int, col: int) -> np.ndarray:
    """Copy of ``rgb`` with the template pasted at ``(row, col)``."""
    out = np.array(rgb, dtype=np.uint8, copy=True)
    if row < 0 or col < 0 or row + template.height > out.shape[0] or col + template.width > out.shape[1]:
        raise DimensionError("template does not fit at the requested position")
    out[row : row + template.height, col : col + template.width] = template.pixels
    return out
