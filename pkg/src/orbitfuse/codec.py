"""Symbolic <-> latent codecs, the observation-lifting network and the training losses.

States are carried as :class:`SymbolicState` holding ``(..., N, 3)`` position
and velocity blocks (arrays or :class:`nnkit.Value`). Position and velocity
go through separate networks and never share parameters.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .camera import CameraConfig, Observation, project_arrays
from .nnkit import Mlp, Value, as_value, concat, where
from .nnkit import value as nv

SYMBOLIC_SIZE = 3
LATENT_SIZE = 32
HIDDEN_SIZE = 64


class MissingDepth(ValueError):
    def __init__(self, obj: int):
        super().__init__(f"object {obj} has no depth sample")
        self.object_index = obj


class MissingGroundtruthZ(ValueError):
    pass


class InitMode(str, enum.Enum):
    SCREEN_ONLY = "screen"
    SCREEN_PLUS_DEPTH = "depth"
    GROUNDTRUTH_Z = "gtz"


@dataclass
class SymbolicState:
    position: object  # (..., N, 3)
    velocity: object

    def numpy(self) -> "SymbolicState":
        return SymbolicState(nv.data_of(self.position).copy(), nv.data_of(self.velocity).copy())

    def detach(self) -> "SymbolicState":
        return SymbolicState(Value(nv.data_of(self.position)), Value(nv.data_of(self.velocity)))

    def flat(self):
        """Position and velocity side by side, ``(..., N, 6)``."""
        if isinstance(self.position, Value) or isinstance(self.velocity, Value):
            return concat([self.position, self.velocity], axis=-1)
        return np.concatenate([self.position, self.velocity], axis=-1)

    @classmethod
    def from_flat(cls, flat) -> "SymbolicState":
        return cls(flat[..., 0:3], flat[..., 3:6])


@dataclass
class LatentState:
    z_position: Value  # (..., N, 32)
    z_velocity: Value


@dataclass
class CodecParams:
    in_position: Mlp
    in_velocity: Mlp
    out_position: Mlp
    out_velocity: Mlp

    @classmethod
    def create(cls, rng: np.random.Generator) -> "CodecParams":
        enc = [SYMBOLIC_SIZE, HIDDEN_SIZE, LATENT_SIZE]
        dec = [LATENT_SIZE, HIDDEN_SIZE, SYMBOLIC_SIZE]
        return cls(Mlp.create(enc, rng), Mlp.create(enc, rng), Mlp.create(dec, rng), Mlp.create(dec, rng))

    def parameters(self, prefix: str = "codec/") -> dict[str, Value]:
        params = {}
        for name in ("in_position", "in_velocity", "out_position", "out_velocity"):
            params.update(getattr(self, name).parameters(f"{prefix}{name}/"))
        return params


def encode(s: SymbolicState, params: CodecParams) -> LatentState:
    return LatentState(params.in_position(s.position), params.in_velocity(s.velocity))


def decode(z: LatentState, params: CodecParams) -> SymbolicState:
    return SymbolicState(params.out_position(z.z_position), params.out_velocity(z.z_velocity))


# ------------------------------------------------------------- lifting network

@dataclass
class InitNet:
    """Per-object map from screen coordinates (and optionally depth) to a world position.

    Inputs are normalised by the camera intrinsics and a reference depth, and
    the network output is scaled back by the same reference depth, so the
    weights work in units of "one reference depth".
    """

    mlp: Mlp
    mode: InitMode
    camera: CameraConfig
    reference_depth: float = 10.0
    # known view depth of the motion plane (planar scenes); replaces the z output when set
    plane_depth: float | None = None

    @classmethod
    def create(cls, mode: InitMode | str, camera: CameraConfig, rng: np.random.Generator,
               reference_depth: float = 10.0, plane_depth: float | None = None) -> "InitNet":
        mode = InitMode(mode)
        in_dim = 2 if mode is InitMode.SCREEN_ONLY else 3
        mlp = Mlp.create([in_dim, HIDDEN_SIZE, SYMBOLIC_SIZE], rng)
        # start every estimate on the optical axis at the reference depth
        mlp.layers[-1].bias.data[:] = (0.0, 0.0, 1.0)
        return cls(mlp, mode, camera, reference_depth, plane_depth)

    @property
    def in_dim(self) -> int:
        return self.mlp.layers[0].in_dim

    def parameters(self, prefix: str = "init/") -> dict[str, Value]:
        return self.mlp.parameters(prefix)

    def features(self, uv: np.ndarray, depth=None):
        """Normalised network input; ``depth`` may be a :class:`Value` so gradients reach it."""
        cx, cy = self.camera.principal_point
        f = self.camera.focal_length
        screen = np.stack([(uv[..., 0] - cx) / f, (uv[..., 1] - cy) / f], axis=-1)
        if self.in_dim == 2:
            return screen
        if depth is None:
            raise MissingDepth(-1)
        scaled = depth * (1.0 / self.reference_depth)
        if isinstance(scaled, Value):
            return concat([Value(screen), scaled.reshape(*scaled.shape, 1)], axis=-1)
        return np.concatenate([screen, scaled[..., None]], axis=-1)

    def __call__(self, uv: np.ndarray, depth=None) -> Value:
        out = self.mlp(self.features(uv, depth))
        return out * self.reference_depth + np.asarray(self.camera.position)


def lift_positions(net: InitNet, uv: np.ndarray, depth=None, gt_z: np.ndarray | None = None) -> Value:
    """World positions for ``(..., N, 2)`` screen coordinates under ``net.mode``.

    ``depth`` is the sampled surface depth (ScreenPlusDepth); ``gt_z`` the true
    world z (GroundtruthZ), which is also what the network sees as its depth
    input and then replaces the z output.
    """
    mode = net.mode
    if mode is InitMode.SCREEN_ONLY:
        out = net(uv)
        if net.plane_depth is None:
            return out
        return _replace_z(out, np.full(out.shape[:-1], net.camera.position[2] + net.plane_depth))
    if mode is InitMode.SCREEN_PLUS_DEPTH:
        if depth is None:
            raise MissingDepth(-1)
        bad = np.argwhere(~np.isfinite(nv.data_of(depth)))
        if bad.size:
            raise MissingDepth(int(bad[0][-1]))
        return net(uv, depth)
    if gt_z is None or not np.all(np.isfinite(gt_z)):
        raise MissingGroundtruthZ("GroundtruthZ mode needs a finite z for every object")
    view_depth = gt_z - net.camera.position[2]
    return _replace_z(net(uv, view_depth), gt_z)


def _replace_z(out: Value, z: np.ndarray) -> Value:
    zmask = np.zeros(out.shape, dtype=bool)
    zmask[..., 2] = True
    return where(zmask, np.broadcast_to(np.asarray(z, dtype=np.float64)[..., None], out.shape), out)


def init_state(obs0: Observation, net: InitNet, mode: InitMode | str | None = None,
               gt_z: np.ndarray | None = None) -> SymbolicState:
    """Initial symbolic state from the first observation; velocities start at zero."""
    if mode is not None and InitMode(mode) is not net.mode:
        raise ValueError(f"net was built for {net.mode.value}, asked for {InitMode(mode).value}")
    depth = obs0.depth_samples
    if net.mode is InitMode.SCREEN_PLUS_DEPTH:
        if depth is None:
            raise MissingDepth(0)
        missing = np.flatnonzero(~np.isfinite(depth))
        if missing.size:
            raise MissingDepth(int(missing[0]))
    pos = lift_positions(net, obs0.screen_coords, depth, gt_z)
    return SymbolicState(pos, Value(np.zeros(pos.shape)))


# --------------------------------------------------------------------- losses

def loss_obs(s_pred: SymbolicState, s_obs: SymbolicState) -> Value:
    diff = as_value(s_pred.flat()) - s_obs.flat()
    return (diff * diff).mean()


def loss_ae(s: SymbolicState, params: CodecParams) -> Value:
    recon = decode(encode(s, params), params)
    diff = recon.flat() - s.flat()
    return (diff * diff).mean()


def loss_rec(predicted, obs: Observation, cam: CameraConfig) -> Value:
    """Mean squared pixel reprojection error of ``predicted`` (a state or positions) against ``obs``.

    Only positions are read. Objects invisible in the observation are
    skipped; predictions that land behind the near plane cost a fixed
    (image diagonal)^2 each.
    """
    positions = predicted.position if isinstance(predicted, SymbolicState) else predicted
    return loss_rec_arrays(positions, obs.screen_coords, obs.visibility, cam)


def loss_rec_arrays(positions, obs_uv: np.ndarray, obs_visible: np.ndarray, cam: CameraConfig) -> Value:
    """Batched :func:`loss_rec`: positions ``(..., N, 3)``, coordinates ``(..., N, 2)``, visibility ``(..., N)``."""
    uv, _, pred_visible = project_arrays(as_value(positions), cam)
    obs_visible = np.asarray(obs_visible, dtype=bool)
    count = int(obs_visible.sum())
    if count == 0:
        return Value(0.0)
    target = np.where(obs_visible[..., None], obs_uv, 0.0)
    err = uv - target
    per_object = (err * err).sum(axis=-1) * 0.5
    penalty = np.full(pred_visible.shape, cam.diagonal ** 2)
    per_object = where(pred_visible, per_object, penalty)
    return where(obs_visible, per_object, 0.0).sum() * (1.0 / count)


def loss_depth(positions, depth_samples: np.ndarray, cam: CameraConfig) -> Value:
    """Squared error between predicted and sampled surface depth, in focal-length pixels.

    The residual is scaled by ``f / depth`` so one unit of relative depth error
    costs about as much as the matching lateral pixel offset. Objects without
    a depth sample are skipped.
    """
    depth = np.asarray(depth_samples, dtype=np.float64)
    ok = np.isfinite(depth) & (depth > 0)
    count = int(ok.sum())
    if count == 0:
        return Value(0.0)
    safe = np.where(ok, depth, 1.0)
    surface = as_value(positions)[..., 2] - (cam.position[2] + cam.object_radius)
    err = (surface - safe) * (cam.focal_length / safe)
    return where(ok, err * err, 0.0).sum() * (1.0 / count)


def loss_total(components, weights=None) -> Value:
    """Unweighted (or optionally weighted) sum of loss terms."""
    components = list(components)
    weights = [1.0] * len(components) if weights is None else list(weights)
    total = Value(0.0)
    for c, w in zip(components, weights):
        total = total + as_value(c) * w
    return total
