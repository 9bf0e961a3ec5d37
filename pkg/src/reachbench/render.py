"""Flat-shaded software rasterizer: pinhole cameras, 64x64 RGB frames.

Images are float64 arrays of shape (C, H, W) with values in [0, 1].  Every
palette colour is a multiple of 1/255, so frames survive a uint8 round trip
exactly (the replay buffer relies on that).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import ArmState, KinematicChain, link_frames

RESOLUTION = 64

BACKGROUND = np.array([128, 128, 128]) / 255.0
LINK_COLOR = np.array([64, 64, 64]) / 255.0
BALL_COLOR = np.array([220, 30, 30]) / 255.0
HEAD_COLOR = np.array([30, 30, 220]) / 255.0

HEAD_RADIUS = 0.03  # m
LINK_HALF_WIDTH = 1.0  # px, giving 2-px lines


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world rotation whose columns are the camera x (right), y (down), z (forward) axes."""
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.column_stack([right, down, fwd])


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    orientation: np.ndarray
    focal_px: float = 64.0
    principal_point: tuple[float, float] = (RESOLUTION / 2, RESOLUTION / 2)
    resolution: tuple[int, int] = (RESOLUTION, RESOLUTION)

    def __post_init__(self):
        r = np.asarray(self.orientation, dtype=np.float64)
        if r.shape != (3, 3) or not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("camera orientation must be a 3x3 orthonormal matrix")
        if self.focal_px <= 0:
            raise ValueError("focal_px must be positive")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "orientation", r)

    def to_camera(self, point) -> np.ndarray:
        return self.orientation.T @ (np.asarray(point, dtype=np.float64) - self.position)


def front_camera(position=(1.2, 0.0, 0.5), look=(0.3, 0.1, 0.2), focal_px: float = 96.0) -> Camera:
    return Camera(np.asarray(position, dtype=np.float64), look_at(position, look), focal_px)


def wrist_camera(tip_pose: np.ndarray, focal_px: float = 64.0) -> Camera:
    """Camera at the tip, optical axis along the final link's z axis (tool direction)."""
    pose = np.asarray(tip_pose, dtype=np.float64)
    return Camera(pose[:3, 3].copy(), pose[:3, :3].copy(), focal_px)


def project(camera: Camera, point) -> tuple[float, float] | None:
    """Pinhole projection to continuous pixel coordinates; None when z <= 0 in camera frame."""
    x, y, z = camera.to_camera(point)
    if z <= 0:
        return None
    cu, cv = camera.principal_point
    return cu + camera.focal_px * x / z, cv + camera.focal_px * y / z


_rows, _cols = np.mgrid[0:RESOLUTION, 0:RESOLUTION]
_PIX_U = _cols + 0.5
_PIX_V = _rows + 0.5


def _pixel_centers(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    if camera.resolution == (RESOLUTION, RESOLUTION):
        return _PIX_U, _PIX_V
    h, w = camera.resolution
    rows, cols = np.mgrid[0:h, 0:w]
    return cols + 0.5, rows + 0.5


def _fill_disk(img: np.ndarray, u, v, center, radius: float, color) -> None:
    mask = (u - center[0]) ** 2 + (v - center[1]) ** 2 <= radius * radius
    img[:, mask] = color[:, None]


def _fill_segment(img: np.ndarray, u, v, p0, p1, half_width: float, color) -> None:
    d = np.subtract(p1, p0)
    length2 = float(d @ d)
    if length2 == 0.0:
        t = np.zeros_like(u)
    else:
        t = np.clip(((u - p0[0]) * d[0] + (v - p0[1]) * d[1]) / length2, 0.0, 1.0)
    du = u - (p0[0] + t * d[0])
    dv = v - (p0[1] + t * d[1])
    mask = du * du + dv * dv <= half_width * half_width
    img[:, mask] = color[:, None]


def render(state: ArmState, chain: KinematicChain, camera: Camera, epsilon: float = 0.05) -> np.ndarray:
    """Draw background, links, target ball (radius epsilon) and gripper head, in that order."""
    h, w = camera.resolution
    u, v = _pixel_centers(camera)
    img = np.empty((3, h, w))
    img[:] = BACKGROUND[:, None, None]

    origins = [f[:3, 3] for f in link_frames(chain, state.joints)]
    projected = [project(camera, p) for p in origins]
    for p0, p1 in zip(projected[:-1], projected[1:]):
        if p0 is not None and p1 is not None:
            _fill_segment(img, u, v, p0, p1, LINK_HALF_WIDTH, LINK_COLOR)

    depth = camera.to_camera(state.target)[2]
    if depth > 0:
        _fill_disk(img, u, v, project(camera, state.target), camera.focal_px * epsilon / depth, BALL_COLOR)

    depth = camera.to_camera(state.tip)[2]
    if depth > 0:
        _fill_disk(img, u, v, project(camera, state.tip), camera.focal_px * HEAD_RADIUS / depth, HEAD_COLOR)
    return img


def concat_channels(front: np.ndarray, wrist: np.ndarray) -> np.ndarray:
    if front.shape[1:] != wrist.shape[1:]:
        raise ValueError(f"resolution mismatch: {front.shape[1:]} vs {wrist.shape[1:]}")
    return np.concatenate([front, wrist], axis=0)


def split_channels(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return image[:3], image[3:]


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(image: np.ndarray) -> np.ndarray:
    return image.astype(np.float64) / 255.0


def write_ppm(image: np.ndarray, path: str | Path) -> None:
    """Binary P6 dump of a 3-channel image (debug aid)."""
    if image.shape[0] != 3:
        raise ValueError("PPM export needs a 3-channel image")
    _, h, w = image.shape
    body = to_uint8(image).transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + body)


def read_ppm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, size, _maxval, body = raw.split(b"\n", 3)
    if magic != b"P6":
        raise ValueError("not a binary PPM file")
    w, h = (int(x) for x in size.split())
    data = np.frombuffer(body[: w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return from_uint8(data.transpose(2, 0, 1))
