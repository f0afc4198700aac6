"""Orbits N-body dynamics: pairwise gravity, a guidance pull toward ``p_g`` and a
semi-implicit Euler update.

The array functions accept either numpy arrays or :class:`nnkit.Value` objects
of shape ``(..., N, 3)``; the same arithmetic runs on both, so a differentiable
step inside a training graph is bit-identical to the plain numpy step.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .nnkit import value as nv


class DegenerateGeometry(ValueError):
    """Two bodies (or a body and the guidance point) coincide without softening."""

    def __init__(self, message: str, frame: int | None = None):
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


class Mode(str, enum.Enum):
    TWO_D = "2d"
    THREE_D = "3d"


@dataclass(frozen=True)
class BodyState:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=np.float64).reshape(3))


@dataclass(frozen=True)
class SceneConfig:
    gravitational_constant: float = 7.0
    object_mass: float = 1.5
    guidance_mass: float = 2.0
    guidance_point: tuple[float, float, float] = (0.0, 0.0, 0.0)
    guidance_coefficient_3d: float = 0.6
    dt: float = 0.05
    num_objects: int = 4
    mode: Mode = Mode.TWO_D
    # 0 disables softening: coincident points raise DegenerateGeometry
    softening_epsilon: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "guidance_point", tuple(float(c) for c in self.guidance_point))
        if self.gravitational_constant <= 0 or self.object_mass <= 0 or self.guidance_mass <= 0:
            raise ValueError("g, m and m_g must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.num_objects < 1:
            raise ValueError("need at least one object")
        if self.softening_epsilon < 0:
            raise ValueError("softening_epsilon must be >= 0")

    def with_(self, **changes) -> "SceneConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "gravitational_constant": self.gravitational_constant,
            "object_mass": self.object_mass,
            "guidance_mass": self.guidance_mass,
            "guidance_point": list(self.guidance_point),
            "guidance_coefficient_3d": self.guidance_coefficient_3d,
            "dt": self.dt,
            "num_objects": self.num_objects,
            "mode": self.mode.value,
            "softening_epsilon": self.softening_epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(**{**d, "guidance_point": tuple(d["guidance_point"]), "mode": Mode(d["mode"])})


@dataclass
class Trajectory:
    positions: np.ndarray  # (T, N, 3)
    velocities: np.ndarray  # (T, N, 3)
    config: SceneConfig = field(default_factory=SceneConfig)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def frames(self) -> list[list[BodyState]]:
        return [states_from_arrays(p, v) for p, v in zip(self.positions, self.velocities)]


def states_to_arrays(states: list[BodyState]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([s.position for s in states]), np.stack([s.velocity for s in states]))


def states_from_arrays(pos: np.ndarray, vel: np.ndarray) -> list[BodyState]:
    return [BodyState(p, v) for p, v in zip(pos, vel)]


# ---------------------------------------------------------------- array core

def _check_strict(r2: np.ndarray, what: str, frame: int | None = None) -> None:
    if np.any(r2 == 0.0):
        raise DegenerateGeometry(f"{what} at zero distance with softening disabled", frame)


def mutual_force_arrays(pos, config: SceneConfig):
    """Pairwise attraction ``sum_i (p_i - p_n) g m^2 / max(|p_i - p_n|, eps)^3``."""
    n = pos.shape[-2]
    if n == 1:
        return pos * 0.0
    diff = pos[..., None, :, :] - pos[..., :, None, :]  # diff[n, i] = p_i - p_n
    # the identity on the diagonal keeps sqrt and the division away from 0/0
    r2 = nv.total(diff * diff, axis=-1) + np.eye(n)
    if config.softening_epsilon == 0.0:
        _check_strict(nv.data_of(r2), "two bodies")
    r = nv.maximum(nv.sqrt(r2), config.softening_epsilon)
    coeff = config.gravitational_constant * config.object_mass ** 2 / (r * r * r)
    return nv.total(diff * coeff[..., None], axis=-2)


def guidance_force_arrays(pos, config: SceneConfig):
    disp = np.asarray(config.guidance_point) - pos
    if config.mode is Mode.THREE_D:
        return disp * config.guidance_coefficient_3d
    r2 = nv.total(disp * disp, axis=-1, keepdims=True)
    if config.softening_epsilon == 0.0:
        _check_strict(nv.data_of(r2), "body and guidance point")
    r = nv.maximum(nv.sqrt(r2), config.softening_epsilon)
    k = config.gravitational_constant * config.object_mass * config.guidance_mass
    return disp * (k / (r * r * r))


_PLANAR = np.array([1.0, 1.0, 0.0])


def step_arrays(pos, vel, config: SceneConfig):
    """One semi-implicit Euler step; returns ``(pos', vel')``."""
    force = mutual_force_arrays(pos, config) + guidance_force_arrays(pos, config)
    if config.mode is Mode.TWO_D:
        force = force * _PLANAR
    vel_next = vel + (force / config.object_mass) * config.dt
    pos_next = pos + vel_next * config.dt
    return pos_next, vel_next


def simulate_arrays(pos: np.ndarray, vel: np.ndarray, config: SceneConfig,
                    num_frames: int) -> tuple[np.ndarray, np.ndarray]:
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    pos = np.asarray(pos, dtype=np.float64)
    vel = np.asarray(vel, dtype=np.float64)
    ps, vs = [pos], [vel]
    for k in range(1, num_frames):
        try:
            pos, vel = step_arrays(pos, vel, config)
        except DegenerateGeometry as exc:
            raise DegenerateGeometry(str(exc), frame=k) from None
        ps.append(pos)
        vs.append(vel)
    return np.stack(ps, axis=-3), np.stack(vs, axis=-3)


# ------------------------------------------------------- BodyState interface

def mutual_force(states: list[BodyState], config: SceneConfig) -> list[np.ndarray]:
    pos, _ = states_to_arrays(states)
    return list(mutual_force_arrays(pos, config))


def guidance_force(state: BodyState, config: SceneConfig) -> np.ndarray:
    return guidance_force_arrays(state.position[None, :], config)[0]


def step(states: list[BodyState], config: SceneConfig) -> list[BodyState]:
    pos, vel = step_arrays(*states_to_arrays(states), config)
    return states_from_arrays(pos, vel)


def simulate(initial: list[BodyState], config: SceneConfig, num_frames: int) -> Trajectory:
    if len(initial) != config.num_objects:
        raise ValueError(f"expected {config.num_objects} bodies, got {len(initial)}")
    pos, vel = simulate_arrays(*states_to_arrays(initial), config, num_frames)
    return Trajectory(pos, vel, config)


def total_energy(pos: np.ndarray, vel: np.ndarray, config: SceneConfig) -> np.ndarray:
    """Kinetic plus pairwise and guidance potential energy (2D guidance law).

    Only meaningful for the inverse-square guidance; the 3D linear pull has a
    different potential.
    """
    m, g = config.object_mass, config.gravitational_constant
    kinetic = 0.5 * m * (vel * vel).sum(axis=(-1, -2))
    n = pos.shape[-2]
    diff = pos[..., None, :, :] - pos[..., :, None, :]
    r = np.sqrt((diff * diff).sum(-1) + np.eye(n))
    iu = np.triu_indices(n, 1)
    pair = -(g * m * m / r[..., iu[0], iu[1]]).sum(-1)
    rg = np.linalg.norm(np.asarray(config.guidance_point) - pos, axis=-1)
    guide = -(g * m * config.guidance_mass / rg).sum(-1)
    return kinetic + pair + guide
