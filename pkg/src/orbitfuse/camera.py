"""Pinhole observation channel: screen projection, depth maps, noisy observations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import BodyState, states_to_arrays
from .nnkit import value as nv

# stands in for "no surface along this ray"; kept finite so maps serialise as plain floats
DEPTH_SENTINEL = np.float32(1.0e6)


@dataclass(frozen=True)
class CameraConfig:
    """Camera looking along +z from ``position``; pixel (col, row) has its centre at (u, v) = (col, row)."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    focal_length: float = 64.0
    image_width: int = 64
    image_height: int = 64
    principal_point: tuple[float, float] = (32.0, 32.0)
    near_plane: float = 0.1
    object_radius: float = 0.75

    def __post_init__(self):
        if self.focal_length <= 0 or self.near_plane <= 0 or self.object_radius <= 0:
            raise ValueError("focal_length, near_plane and object_radius must be positive")
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))
        object.__setattr__(self, "principal_point", tuple(float(c) for c in self.principal_point))

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.image_width, self.image_height))

    def to_dict(self) -> dict:
        return {"position": list(self.position), "focal_length": self.focal_length,
                "image_width": self.image_width, "image_height": self.image_height,
                "principal_point": list(self.principal_point), "near_plane": self.near_plane,
                "object_radius": self.object_radius}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraConfig":
        return cls(**{**d, "position": tuple(d["position"]),
                      "principal_point": tuple(d["principal_point"])})


@dataclass
class DepthMap:
    width: int
    height: int
    values: np.ndarray  # (height, width) float32, row-major

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (self.height, self.width):
            raise ValueError(f"depth values shape {self.values.shape} != {(self.height, self.width)}")


@dataclass
class Observation:
    frame_index: int
    screen_coords: np.ndarray  # (N, 2); NaN where not visible
    visibility: np.ndarray  # (N,) bool
    depth_samples: np.ndarray | None = None  # (N,), NaN where the map had no depth

    @property
    def num_objects(self) -> int:
        return len(self.visibility)


def project_arrays(pos, cam: CameraConfig):
    """Project ``(..., 3)`` world points; returns ``(uv, depth, visible)``.

    Works on arrays and on :class:`nnkit.Value`. ``uv`` is computed with a
    stand-in depth of 1 where the point is not visible, so it stays finite
    there; callers must mask with ``visible``.
    """
    rel = pos - np.asarray(cam.position)
    depth = rel[..., 2]
    visible = nv.data_of(depth) > cam.near_plane
    safe = nv.select(visible, depth, 1.0)
    scale = cam.focal_length / safe
    uv = rel[..., 0:2] * scale[..., None] + np.asarray(cam.principal_point)
    return uv, depth, visible


def project(world_point, cam: CameraConfig) -> tuple[float, float, float] | None:
    """Pinhole projection of one point, or ``None`` when it is not in front of the near plane."""
    uv, depth, visible = project_arrays(np.asarray(world_point, dtype=np.float64), cam)
    if not visible:
        return None
    return float(uv[0]), float(uv[1]), float(depth)


def pixel_rays(cam: CameraConfig) -> np.ndarray:
    """Ray direction per pixel, scaled so the z component is 1; shape (H, W, 3)."""
    cols = np.arange(cam.image_width, dtype=np.float64)
    rows = np.arange(cam.image_height, dtype=np.float64)
    x = (cols - cam.principal_point[0]) / cam.focal_length
    y = (rows - cam.principal_point[1]) / cam.focal_length
    rays = np.empty((cam.image_height, cam.image_width, 3))
    rays[..., 0] = x[None, :]
    rays[..., 1] = y[:, None]
    rays[..., 2] = 1.0
    return rays


def render_depth_map_arrays(pos: np.ndarray, cam: CameraConfig) -> DepthMap:
    rays = pixel_rays(cam)
    dd = (rays * rays).sum(-1)
    out = np.full((cam.image_height, cam.image_width), np.inf)
    radius2 = cam.object_radius ** 2
    for center in np.asarray(pos, dtype=np.float64) - np.asarray(cam.position):
        # |t d - c|^2 = R^2 with d_z = 1, so t is the view-axis depth
        dc = rays @ center
        disc = dc * dc - dd * (center @ center - radius2)
        hit = disc >= 0
        t = np.where(hit, (dc - np.sqrt(np.where(hit, disc, 0.0))) / dd, np.inf)
        t = np.where(t > cam.near_plane, t, np.inf)
        np.minimum(out, t, out=out)
    out[~np.isfinite(out)] = DEPTH_SENTINEL
    return DepthMap(cam.image_width, cam.image_height, out.astype(np.float32))


def render_depth_map(states: list[BodyState], cam: CameraConfig) -> DepthMap:
    pos, _ = states_to_arrays(states)
    return render_depth_map_arrays(pos, cam)


def sample_depth(depth_map: DepthMap, coord) -> float | None:
    """Nearest-pixel depth at ``(u, v)`` after clamping to the image; ``None`` on background."""
    col = int(np.clip(np.floor(coord[0] + 0.5), 0, depth_map.width - 1))
    row = int(np.clip(np.floor(coord[1] + 0.5), 0, depth_map.height - 1))
    value = depth_map.values[row, col]
    if value >= DEPTH_SENTINEL:
        return None
    return float(value)


def observe_arrays(pos: np.ndarray, cam: CameraConfig, noise_sigma: float, rng: np.random.Generator,
                   depth_map: DepthMap | None = None, frame_index: int = 0) -> Observation:
    if not np.isfinite(noise_sigma) or noise_sigma < 0:
        raise ValueError("noise_sigma must be finite and >= 0")
    uv, _, visible = project_arrays(np.asarray(pos, dtype=np.float64), cam)
    # always draw so the stream position does not depend on visibility
    noise = rng.normal(0.0, 1.0, size=uv.shape) * noise_sigma
    coords = np.where(visible[:, None], uv + noise, np.nan)
    depth = None
    if depth_map is not None:
        depth = np.full(len(coords), np.nan)
        for i, (c, vis) in enumerate(zip(coords, visible)):
            if vis:
                sample = sample_depth(depth_map, c)
                if sample is not None:
                    depth[i] = sample
    return Observation(frame_index, coords, visible, depth)


def observe(states: list[BodyState], cam: CameraConfig, noise_sigma: float, rng: np.random.Generator,
            depth_map: DepthMap | None = None, frame_index: int = 0) -> Observation:
    pos, _ = states_to_arrays(states)
    return observe_arrays(pos, cam, noise_sigma, rng, depth_map, frame_index)
