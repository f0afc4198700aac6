"""Episode generation and the on-disk dataset format.

A dataset is a directory holding ``manifest.json`` and one binary file per
episode. Episode layout (little-endian)::

    magic      b"OFEP"
    u32        version
    u32        N objects
    u32        T frames
    u32        flags (bit 0: depth samples, bit 1: depth map)
    u64        generator seed
    f64[T,N,3] positions
    f64[T,N,3] velocities
    f64[T,N,2] observed screen coordinates (NaN where not visible)
    u8[T,N]    visibility
    f64[N]     frame-0 depth samples (NaN = no depth)   if flag bit 0
    depth map block                                     if flag bit 1:
        u32 width, u32 height, f32 sentinel, u32 reserved
        f32[height, width]

Seeds: episode ``k`` draws from ``derive_seed(master_seed, k)``, a 64-bit
value produced by ``numpy.random.SeedSequence([master_seed, k])``. When an
episode has to be rejected, the generator moves on to the next counter value,
so the ``k``-th accepted episode may come from a counter above ``k``.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import camera as cam_mod
from ..camera import CameraConfig, DepthMap, Observation
from ..dynamics import DegenerateGeometry, Mode, SceneConfig, Trajectory, simulate_arrays
from ..estimator import ObservationBatch, TrainingData

log = logging.getLogger(__name__)

EPISODE_MAGIC = b"OFEP"
EPISODE_VERSION = 1
MANIFEST_VERSION = 1
FLAG_DEPTH_SAMPLES = 1
FLAG_DEPTH_MAP = 2


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    """Everything that determines a dataset besides the master seed and size."""

    scene: SceneConfig = field(default_factory=SceneConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    num_frames: int = 30
    position_range: float = 4.0  # half-width of the initial position box
    camera_distance: float = 10.0  # box centre along the view axis
    velocity_range: float = 1.5
    noise_sigma: float = 2.0
    max_attempts: int = 100  # per accepted episode

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if self.position_range < 0 or self.velocity_range < 0 or self.noise_sigma < 0:
            raise ValueError("ranges and noise must be non-negative")

    @property
    def mode(self) -> Mode:
        return self.scene.mode

    def to_dict(self) -> dict:
        return {"scene": self.scene.to_dict(), "camera": self.camera.to_dict(),
                "num_frames": self.num_frames, "position_range": self.position_range,
                "camera_distance": self.camera_distance, "velocity_range": self.velocity_range,
                "noise_sigma": self.noise_sigma, "max_attempts": self.max_attempts}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        return cls(**{**d, "scene": SceneConfig.from_dict(d["scene"]),
                      "camera": CameraConfig.from_dict(d["camera"])})


def benchmark_config(mode: Mode | str = Mode.TWO_D, noise_sigma: float = 2.0) -> DatasetConfig:
    """Scene, camera and sampling ranges used by the benchmark experiments.

    Softening of 0.5 (about the sphere radius) keeps close encounters from
    turning 30-frame episodes chaotic, and the 128 px camera with velocities up
    to 3 makes velocity recoverable from 2 px noise in a few frames.
    """
    mode = Mode(mode)
    scene = SceneConfig(mode=mode, softening_epsilon=0.5)
    camera = CameraConfig(focal_length=128.0, image_width=128, image_height=128,
                          principal_point=(64.0, 64.0))
    return DatasetConfig(scene=scene, camera=camera, velocity_range=3.0, noise_sigma=noise_sigma)


def derive_seed(master_seed: int, counter: int) -> int:
    state = np.random.SeedSequence([int(master_seed), int(counter)]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


@dataclass
class Episode:
    episode_id: str
    scene: SceneConfig
    trajectory: Trajectory
    observations: list[Observation]
    depth_map: DepthMap | None
    seed: int

    @property
    def num_frames(self) -> int:
        return len(self.trajectory)

    def screen_coords(self) -> np.ndarray:
        return np.stack([o.screen_coords for o in self.observations])

    def visibility(self) -> np.ndarray:
        return np.stack([o.visibility for o in self.observations])


def sample_initial(config: DatasetConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = config.scene.num_objects
    centre = np.asarray(config.scene.guidance_point) + np.array([0.0, 0.0, config.camera_distance])
    r, vr = config.position_range, config.velocity_range
    if config.mode is Mode.TWO_D:
        pos = np.concatenate([rng.uniform(-r, r, (n, 2)), np.zeros((n, 1))], axis=-1) + centre
        vel = np.concatenate([rng.uniform(-vr, vr, (n, 2)), np.zeros((n, 1))], axis=-1)
    else:
        pos = rng.uniform(-r, r, (n, 3)) + centre
        vel = rng.uniform(-vr, vr, (n, 3))
    return pos, vel


def make_episode(config: DatasetConfig, seed: int, episode_id: str) -> Episode | None:
    """One episode from ``seed``, or ``None`` when it has to be rejected.

    Rejected: degenerate geometry; in 3D also any object leaving the visible
    half-space or lacking a frame-0 depth sample, since the estimator needs
    every object lifted on every burn-in frame.
    """
    rng = np.random.default_rng(seed)
    pos0, vel0 = sample_initial(config, rng)
    try:
        pos, vel = simulate_arrays(pos0, vel0, config.scene, config.num_frames)
    except DegenerateGeometry:
        return None
    if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(vel)):
        return None
    depth_map = None
    if config.mode is Mode.THREE_D:
        depth_map = cam_mod.render_depth_map_arrays(pos[0], config.camera)
    noise_rng = np.random.default_rng(rng.integers(0, 2**63))
    observations = []
    for t in range(config.num_frames):
        observations.append(cam_mod.observe_arrays(pos[t], config.camera, config.noise_sigma, noise_rng,
                                                   depth_map if t == 0 else None, frame_index=t))
    if config.mode is Mode.THREE_D:
        if not all(o.visibility.all() for o in observations):
            return None
        if not np.all(np.isfinite(observations[0].depth_samples)):
            return None
    return Episode(episode_id, config.scene, Trajectory(pos, vel, config.scene), observations, depth_map, seed)


def generate_episodes(config: DatasetConfig, num_episodes: int, master_seed: int) -> tuple[list[Episode], int]:
    """Accepted episodes plus the number of rejected draws."""
    episodes, counter, rejected = [], 0, 0
    for k in range(num_episodes):
        for _ in range(config.max_attempts):
            seed = derive_seed(master_seed, counter)
            counter += 1
            ep = make_episode(config, seed, f"s{master_seed}-e{k:05d}")
            if ep is not None:
                episodes.append(ep)
                break
            rejected += 1
        else:
            raise DatasetError(f"episode {k}: no valid draw in {config.max_attempts} attempts")
    if rejected:
        log.info("resampled %d rejected episode draws", rejected)
    return episodes, rejected


# ------------------------------------------------------------------ format

def encode_depth_map(depth_map: DepthMap) -> bytes:
    head = struct.pack("<IIfI", depth_map.width, depth_map.height, float(cam_mod.DEPTH_SENTINEL), 0)
    return head + np.ascontiguousarray(depth_map.values, dtype="<f4").tobytes()


def decode_depth_map(blob: bytes, offset: int = 0) -> tuple[DepthMap, int]:
    width, height, _sentinel, _ = struct.unpack_from("<IIfI", blob, offset)
    offset += 16
    count = width * height
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(height, width)
    return DepthMap(width, height, values.copy()), offset + 4 * count


def encode_episode(ep: Episode) -> bytes:
    pos = ep.trajectory.positions
    t, n, _ = pos.shape
    depth0 = ep.observations[0].depth_samples
    flags = (FLAG_DEPTH_SAMPLES if depth0 is not None else 0) | (FLAG_DEPTH_MAP if ep.depth_map is not None else 0)
    parts = [EPISODE_MAGIC, struct.pack("<IIIIQ", EPISODE_VERSION, n, t, flags, ep.seed)]
    for arr in (pos, ep.trajectory.velocities, ep.screen_coords()):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    parts.append(ep.visibility().astype(np.uint8).tobytes())
    if depth0 is not None:
        parts.append(np.ascontiguousarray(depth0, dtype="<f8").tobytes())
    if ep.depth_map is not None:
        parts.append(encode_depth_map(ep.depth_map))
    return b"".join(parts)


def decode_episode(blob: bytes, episode_id: str, scene: SceneConfig) -> Episode:
    if blob[:4] != EPISODE_MAGIC:
        raise DatasetError(f"{episode_id}: bad magic")
    version, n, t, flags, seed = struct.unpack_from("<IIIIQ", blob, 4)
    if version != EPISODE_VERSION:
        raise DatasetError(f"{episode_id}: unsupported episode version {version}")
    off = 28

    def take(dtype, shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(shape).copy()
        off += count * np.dtype(dtype).itemsize
        return arr

    pos = take("<f8", (t, n, 3))
    vel = take("<f8", (t, n, 3))
    uv = take("<f8", (t, n, 2))
    vis = take("u1", (t, n)).astype(bool)
    depth0 = take("<f8", (n,)) if flags & FLAG_DEPTH_SAMPLES else None
    depth_map = None
    if flags & FLAG_DEPTH_MAP:
        depth_map, off = decode_depth_map(blob, off)
    if off != len(blob):
        raise DatasetError(f"{episode_id}: trailing bytes")
    obs = [Observation(k, uv[k], vis[k], depth0 if k == 0 else None) for k in range(t)]
    return Episode(episode_id, scene, Trajectory(pos, vel, scene), obs, depth_map, int(seed))


def _manifest(config: DatasetConfig, master_seed: int, episodes: list[Episode], rejected: int) -> dict:
    return {
        "format_version": MANIFEST_VERSION,
        "master_seed": int(master_seed),
        "config": config.to_dict(),
        "rejected_draws": rejected,
        "episodes": [{"id": ep.episode_id, "seed": ep.seed, "file": f"{ep.episode_id}.bin"} for ep in episodes],
    }


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def generate_dataset(config: DatasetConfig, num_episodes: int, master_seed: int, output_path) -> dict:
    """Generate, write and return the manifest. Output is a pure function of the arguments."""
    if num_episodes < 0:
        raise ValueError("num_episodes must be >= 0")
    out = Path(output_path)
    out.mkdir(parents=True, exist_ok=True)
    episodes, rejected = generate_episodes(config, num_episodes, master_seed)
    for ep in episodes:
        (out / f"{ep.episode_id}.bin").write_bytes(encode_episode(ep))
    manifest = _manifest(config, master_seed, episodes, rejected)
    write_json(out / "manifest.json", manifest)
    return manifest


@dataclass
class Dataset:
    path: Path
    config: DatasetConfig
    master_seed: int
    episodes: list[Episode]

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def episode_ids(self) -> list[str]:
        return [ep.episode_id for ep in self.episodes]

    def training_data(self, gt_z: bool = True) -> TrainingData:
        """Stack all episodes; ``gt_z`` attaches true world z for the GroundtruthZ probe."""
        if not self.episodes:
            raise DatasetError("dataset is empty")
        pos = np.stack([ep.trajectory.positions for ep in self.episodes])
        vel = np.stack([ep.trajectory.velocities for ep in self.episodes])
        uv = np.stack([ep.screen_coords() for ep in self.episodes])
        vis = np.stack([ep.visibility() for ep in self.episodes])
        d0 = [ep.observations[0].depth_samples for ep in self.episodes]
        depth0 = None if any(d is None for d in d0) else np.stack(d0)
        return TrainingData(pos, vel, ObservationBatch(uv, vis, depth0, pos[..., 2].copy() if gt_z else None))


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise DatasetError(f"no manifest.json in {path}") from None
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise DatasetError(f"unsupported manifest version {manifest.get('format_version')}")
    config = DatasetConfig.from_dict(manifest["config"])
    episodes = [decode_episode((path / e["file"]).read_bytes(), e["id"], config.scene)
                for e in manifest["episodes"]]
    return Dataset(path, config, int(manifest["master_seed"]), episodes)
