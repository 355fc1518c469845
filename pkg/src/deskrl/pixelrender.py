"""Tiny deterministic software renderer for the cartpole pixel task.

Orthographic 2-D rasterization into small RGB buffers, with visual domain
randomization, brightness post-processing, and grayscale frame stacking.
No anti-aliasing: coverage is nearest-pixel, which keeps renders bitwise
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import DynamicsParams, SystemState
from .mathcore import InvalidInputError

# ITU-R 601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class VisualParams:
    background: tuple = (40, 40, 60)
    cart_color: tuple = (200, 60, 60)
    pole_color: tuple = (240, 240, 100)
    camera_offset: tuple = (0.0, 0.0)   # meters, (x, y)
    camera_zoom: float = 1.0
    brightness: float = 1.0

    def __post_init__(self):
        for c in (self.background, self.cart_color, self.pole_color):
            if len(c) != 3 or any(not 0 <= v <= 255 for v in c):
                raise InvalidInputError("colors must be RGB triples in [0, 255]")
        if self.camera_zoom <= 0:
            raise InvalidInputError("camera zoom must be positive")
        if self.brightness < 0:
            raise InvalidInputError("brightness factor must be non-negative")


@dataclass(frozen=True)
class VisualBounds:
    """Sampling ranges for visual domain randomization."""

    color_jitter: float = 40.0       # +/- per channel
    camera_offset_range: float = 0.2  # meters
    zoom_range: tuple = (0.85, 1.15)
    brightness_range: tuple = (0.7, 1.3)
    nominal: VisualParams = VisualParams()


# world extent shown at zoom 1: x in [-2.4, 2.4], y in [-0.6, 1.8] scaled to square
_VIEW_HALF_WIDTH = 2.4
_CART_W = 0.36       # meters
_CART_H = 0.22
_CART_Y = 0.0        # cart center height in world
_POLE_THICK = 0.045


def _world_to_pixel_scale(w: int, v: VisualParams) -> float:
    return w / (2.0 * _VIEW_HALF_WIDTH) * v.camera_zoom


def render_cartpole(state: SystemState, v: VisualParams, w: int, h: int,
                    p: DynamicsParams | None = None) -> np.ndarray:
    """Rasterize one cartpole state into an (h, w, 3) uint8 buffer."""
    out = batch_render(
        SystemState(q=state.q[None, :], v=state.v[None, :], t=state.t), [v], w, h, p
    )
    return out[0]


def batch_render(states: SystemState, params, w: int, h: int,
                 p: DynamicsParams | None = None) -> np.ndarray:
    """Render a batch of cartpole states; returns (n, h, w, 3) uint8.

    Elementwise identical to independent single-state renders.
    """
    if w <= 0 or h <= 0:
        raise InvalidInputError("viewport must have positive area")
    p = p or DynamicsParams()
    q = np.atleast_2d(states.q)
    n = q.shape[0]
    if len(params) != n:
        raise InvalidInputError("params length must match batch size")

    # pixel-center coordinates, y up
    xs = (np.arange(w) + 0.5) - w / 2.0
    ys = h / 2.0 - (np.arange(h) + 0.5)
    px, py = np.meshgrid(xs, ys)  # (h, w)

    imgs = np.empty((n, h, w, 3), dtype=np.uint8)
    for i in range(n):
        v = params[i]
        scale = _world_to_pixel_scale(w, v)
        # world coords of each pixel center
        wx = px / scale + v.camera_offset[0]
        wy = py / scale + v.camera_offset[1]

        img = np.empty((h, w, 3), dtype=np.uint8)
        img[:] = np.asarray(v.background, dtype=np.uint8)

        cart_x, theta = q[i, 0], q[i, 1]
        cart_mask = (np.abs(wx - cart_x) <= _CART_W / 2) & (
            np.abs(wy - _CART_Y) <= _CART_H / 2
        )
        img[cart_mask] = np.asarray(v.cart_color, dtype=np.uint8)

        # pole segment from cart pivot, angle measured from upright
        pivot = np.array([cart_x, _CART_Y + _CART_H / 2])
        tip = pivot + p.pole_length * np.array([np.sin(theta), np.cos(theta)])
        d = tip - pivot
        seg_len2 = float(d @ d)
        rx, ry = wx - pivot[0], wy - pivot[1]
        tproj = np.clip((rx * d[0] + ry * d[1]) / seg_len2, 0.0, 1.0)
        dist2 = (rx - tproj * d[0]) ** 2 + (ry - tproj * d[1]) ** 2
        pole_mask = dist2 <= (_POLE_THICK / 2) ** 2
        img[pole_mask] = np.asarray(v.pole_color, dtype=np.uint8)

        imgs[i] = img
    return imgs


def randomize_visuals(rng: np.random.Generator, bounds: VisualBounds) -> VisualParams:
    """Sample one VisualParams within the configured bounds."""
    nom = bounds.nominal

    def jitter(color):
        c = np.asarray(color, dtype=float)
        c = c + rng.uniform(-bounds.color_jitter, bounds.color_jitter, 3)
        return tuple(np.clip(c, 0, 255))

    return replace(
        nom,
        background=jitter(nom.background),
        cart_color=jitter(nom.cart_color),
        pole_color=jitter(nom.pole_color),
        camera_offset=tuple(
            rng.uniform(-bounds.camera_offset_range, bounds.camera_offset_range, 2)
        ),
        camera_zoom=float(rng.uniform(*bounds.zoom_range)),
        brightness=float(rng.uniform(*bounds.brightness_range)),
    )


def brightness_postprocess(img: np.ndarray, factor: float) -> np.ndarray:
    """Per-pixel multiply with saturation at 255."""
    if factor < 0:
        raise InvalidInputError("brightness factor must be non-negative")
    out = np.asarray(img, dtype=float) * factor
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


class FrameStack:
    """Three most recent grayscale frames, newest last."""

    def __init__(self, h: int, w: int, depth: int = 3):
        self.h, self.w, self.depth = h, w, depth
        self._frames: list[np.ndarray] | None = None

    def reset(self, first_gray: np.ndarray):
        self._frames = [first_gray.copy() for _ in range(self.depth)]

    def push(self, gray: np.ndarray) -> np.ndarray:
        if self._frames is None:
            self.reset(gray)
        else:
            self._frames = self._frames[1:] + [gray.copy()]
        return self.stacked()

    def stacked(self) -> np.ndarray:
        if self._frames is None:
            raise InvalidInputError("frame stack read before reset")
        return np.stack(self._frames, axis=-1)


def rgb_to_gray(img: np.ndarray) -> np.ndarray:
    """Luminance in [0, 1] from an 8-bit RGB image (ITU-R 601 weights)."""
    return np.asarray(img, dtype=float) @ _LUMA / 255.0


def to_grayscale_stack(img: np.ndarray, stack: FrameStack):
    """Push one RGB frame; return the (h, w, 3) stacked grayscale tensor."""
    obs = stack.push(rgb_to_gray(img))
    return obs, stack


def write_ppm(img: np.ndarray, path):
    """Dump an (h, w, 3) uint8 image as binary PPM (debug aid)."""
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(img.astype(np.uint8).tobytes())
