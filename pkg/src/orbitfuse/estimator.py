"""Recursive prediction/observation fusion with a constant or learned gain.

During burn-in every frame is lifted to an observed symbolic state ``s_obs``,
the dynamics give ``s_pred``, and the two are blended per coordinate:
``s = s_pred + K (s_obs - s_pred)``. Rollout runs the dynamics alone.
All functions are batched over a leading episode axis.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .camera import CameraConfig
from .codec import (
    CodecParams,
    InitMode,
    InitNet,
    LatentState,
    SymbolicState,
    encode,
    lift_positions,
    loss_ae,
    loss_depth,
    loss_obs,
    loss_rec_arrays,
)
from .dynamics import SceneConfig
from .nnkit import (
    DenseLayer,
    GruCell,
    OptimizerState,
    ShapeMismatch,
    Value,
    as_value,
    backward,
    checkpoint,
    concat,
    forward_dense,
    gru_step,
    no_grad,
    optimizer_step,
    stack,
    where,
    zero_grads,
)
from .nnkit import value as nv

log = logging.getLogger(__name__)

GAIN_HIDDEN = 128


class NonFiniteLoss(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


# ------------------------------------------------------------------ gain

@dataclass
class GainNetParams:
    input_layer: DenseLayer
    gru: GruCell
    output_layer: DenseLayer

    @classmethod
    def create(cls, num_objects: int, rng: np.random.Generator, hidden: int = GAIN_HIDDEN,
               latent_size: int = 32) -> "GainNetParams":
        width = num_objects * 2 * 2 * latent_size
        return cls(DenseLayer.create(width, hidden, rng, "relu"),
                   GruCell.create(hidden, hidden, rng),
                   DenseLayer.create(hidden, num_objects * 6, rng, "none"))

    @property
    def num_objects(self) -> int:
        return self.output_layer.out_dim // 6

    def parameters(self, prefix: str = "gain/") -> dict[str, Value]:
        params = {}
        params.update(self.input_layer.parameters(f"{prefix}input/"))
        params.update(self.gru.parameters(f"{prefix}gru/"))
        params.update(self.output_layer.parameters(f"{prefix}output/"))
        return params


@dataclass
class ConstantK:
    k: float

    def __post_init__(self):
        if not 0.0 <= self.k <= 1.0:
            raise ValueError(f"constant gain must lie in [0, 1], got {self.k}")

    @property
    def label(self) -> str:
        return f"constant:{self.k:g}"


@dataclass
class LearnedGain:
    params: GainNetParams

    @property
    def label(self) -> str:
        return "learned"


GainStrategy = ConstantK | LearnedGain


@dataclass
class EstimatorState:
    symbolic: SymbolicState
    latent: LatentState | None = None
    gru_hidden: Value | None = None
    frame_index: int = 0


@dataclass
class FrameRecord:
    frame_index: int
    s: SymbolicState
    s_pred: SymbolicState | None = None
    s_obs: SymbolicState | None = None
    gain: object = None  # (..., N, 6) or None on frame 0


def predict(state: EstimatorState | SymbolicState, config: SceneConfig) -> SymbolicState:
    s = state.symbolic if isinstance(state, EstimatorState) else state
    pos, vel = dynamics.step_arrays(s.position, s.velocity, config)
    return SymbolicState(pos, vel)


def compute_gain(strategy: GainStrategy, z_obs: LatentState | None, z_pred: LatentState | None,
                 gru_hidden=None, shape: tuple | None = None):
    """Per-coordinate gain ``K`` of shape ``(..., N, 6)`` and the next GRU hidden state.

    For :class:`ConstantK` only ``shape`` (or the latents' leading shape) is
    needed and the hidden state passes through unchanged.
    """
    if isinstance(strategy, ConstantK):
        if shape is None:
            shape = tuple(z_obs.z_position.shape[:-1]) + (6,)
        return np.full(shape, float(strategy.k)), gru_hidden
    params = strategy.params
    lead = z_obs.z_position.shape[:-2]
    n = z_obs.z_position.shape[-2]
    if n != params.num_objects:
        raise ShapeMismatch(f"gain network built for {params.num_objects} objects, got {n}")
    per_object = concat([z_obs.z_position, z_obs.z_velocity, z_pred.z_position, z_pred.z_velocity], axis=-1)
    joined = per_object.reshape(*lead, n * per_object.shape[-1])
    if gru_hidden is None:
        gru_hidden = Value(np.zeros(tuple(lead) + (params.gru.hidden_size,)))
    hidden = gru_step(params.gru, forward_dense(params.input_layer, joined), gru_hidden)
    logits = forward_dense(params.output_layer, hidden)
    return logits.sigmoid().reshape(*lead, n, 6), hidden


def fuse(s_pred: SymbolicState, s_obs: SymbolicState, gain) -> SymbolicState:
    """``s_pred + K (s_obs - s_pred)`` per coordinate, exact at K = 0 and K = 1.

    Evaluated as ``(1 - K) s_pred + K s_obs`` and clamped to the interval
    spanned by the two inputs so rounding can never leave it.
    """
    a, b = s_pred.flat(), s_obs.flat()
    if isinstance(gain, Value) or isinstance(a, Value) or isinstance(b, Value):
        a, b, k = as_value(a), as_value(b), as_value(gain)
        mixed = (1.0 - k) * a + k * b
        a_low = a.data <= b.data
        lo = where(a_low, a, b)
        hi = where(a_low, b, a)
        mixed = where(mixed.data < lo.data, lo, mixed)
        mixed = where(mixed.data > hi.data, hi, mixed)
    else:
        k = np.asarray(gain, dtype=np.float64)
        mixed = (1.0 - k) * a + k * b
        mixed = np.clip(mixed, np.minimum(a, b), np.maximum(a, b))
    return SymbolicState.from_flat(mixed)


# ------------------------------------------------------------ observations

@dataclass
class ObservationBatch:
    """Observed quantities over ``T`` frames, optionally with leading episode axes."""

    uv: np.ndarray  # (..., T, N, 2)
    visible: np.ndarray  # (..., T, N)
    depth0: np.ndarray | None = None  # (..., N) depth sampled on frame 0
    gt_z: np.ndarray | None = None  # (..., T, N) true world z, GroundtruthZ probe only

    @property
    def num_frames(self) -> int:
        return self.uv.shape[-3]

    def frame(self, t: int):
        """``(uv, visible, gt_z)`` of frame ``t``."""
        return (self.uv[..., t, :, :], self.visible[..., t, :],
                None if self.gt_z is None else self.gt_z[..., t, :])

    @classmethod
    def from_observations(cls, observations, gt_z: np.ndarray | None = None) -> "ObservationBatch":
        """Unbatched view of a list of per-frame observations; ``gt_z`` is ``(T, N)``."""
        uv = np.stack([o.screen_coords for o in observations])
        vis = np.stack([o.visibility for o in observations])
        return cls(uv, vis, observations[0].depth_samples,
                   None if gt_z is None else np.asarray(gt_z, dtype=np.float64))


    def batched(self) -> "ObservationBatch":
        """Same data with exactly one leading episode axis."""
        if self.uv.ndim == 4:
            return self
        if self.uv.ndim != 3:
            raise ShapeMismatch(f"screen coordinates of shape {self.uv.shape}")
        return ObservationBatch(self.uv[None], self.visible[None],
                                None if self.depth0 is None else self.depth0[None],
                                None if self.gt_z is None else self.gt_z[None])


def as_batch(obs) -> ObservationBatch:
    return obs if isinstance(obs, ObservationBatch) else ObservationBatch.from_observations(list(obs))


@dataclass
class Model:
    codec: CodecParams
    init_net: InitNet
    strategy: GainStrategy
    scene: SceneConfig
    camera: CameraConfig

    def parameters(self) -> dict[str, Value]:
        params = {}
        params.update(self.codec.parameters("codec/"))
        params.update(self.init_net.parameters("init/"))
        if isinstance(self.strategy, LearnedGain):
            params.update(self.strategy.params.parameters("gain/"))
        return params

    @classmethod
    def create(cls, scene: SceneConfig, camera: CameraConfig, init_mode: InitMode | str,
               strategy: str | GainStrategy, rng: np.random.Generator,
               plane_depth: float | None = None) -> "Model":
        """``plane_depth`` pins the lifted z in planar (2D) scenes to the known camera distance."""
        codec = CodecParams.create(rng)
        ref = plane_depth if plane_depth is not None else _reference_depth(scene, camera)
        pinned = plane_depth if scene.mode is dynamics.Mode.TWO_D else None
        init_net = InitNet.create(init_mode, camera, rng, reference_depth=ref, plane_depth=pinned)
        if isinstance(strategy, str):
            strategy = parse_strategy(strategy, scene.num_objects, rng)
        return cls(codec, init_net, strategy, scene, camera)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for k, p in params.items():
            if arrays[k].shape != p.shape:
                raise ShapeMismatch(f"{k}: checkpoint {arrays[k].shape} vs model {p.shape}")
            p.data[...] = arrays[k]

    def save(self, path) -> None:
        checkpoint.save(path, self.state_arrays())

    def load(self, path) -> None:
        self.load_arrays(checkpoint.load(path))


def _reference_depth(scene: SceneConfig, camera: CameraConfig) -> float:
    # distance from the camera to the guidance point along the view axis, when it is in front
    d = scene.guidance_point[2] - camera.position[2]
    return d if d > camera.near_plane else 10.0


def parse_strategy(spec: str, num_objects: int, rng: np.random.Generator) -> GainStrategy:
    if spec == "learned":
        return LearnedGain(GainNetParams.create(num_objects, rng))
    if spec.startswith("constant:"):
        return ConstantK(float(spec.split(":", 1)[1]))
    raise ValueError(f"unknown gain strategy {spec!r} (use 'learned' or 'constant:<k>')")


def lift_observation(obs, frame: int, init_net: InitNet, config: SceneConfig,
                     prev: SymbolicState | None = None, s_pred: SymbolicState | None = None) -> SymbolicState:
    """Observed symbolic state ``s_obs`` for ``frame`` of ``obs`` (a batch or a list of observations).

    Positions come from the lifting network. A depth map only exists for
    frame 0, so on later frames a depth-conditioned network is fed the
    predicted surface depth and its z output is replaced by the predicted z
    (feeding its own z back would turn small depth biases into velocity
    errors of size bias / dt). Objects not visible in the observation take
    the predicted position. Velocity is the backward difference against the
    previous fused position ``prev``, or zero without one.
    """
    obs = as_batch(obs)
    uv, visible, gt_z = obs.frame(frame)
    later = frame > 0 and s_pred is not None
    depth = None
    if init_net.mode is InitMode.SCREEN_PLUS_DEPTH:
        if later:
            cam = init_net.camera
            depth = as_value(s_pred.position)[..., 2] - (cam.position[2] + cam.object_radius)
        else:
            depth = obs.depth0
    if not visible.all():
        if s_pred is None:
            raise ValueError(f"frame {frame}: object not visible and no prediction to fall back on")
        uv = np.where(visible[..., None], uv, init_net.camera.principal_point)
        if depth is not None:
            depth = nv.select(visible, depth, init_net.reference_depth)
    pos = lift_positions(init_net, uv, depth, gt_z)
    if init_net.mode is InitMode.SCREEN_PLUS_DEPTH and later:
        zmask = np.zeros(pos.shape, dtype=bool)
        zmask[..., 2] = True
        pos = where(zmask, as_value(s_pred.position), pos)
    if not visible.all():
        pos = where(np.broadcast_to(visible[..., None], pos.shape), pos, s_pred.position)
    if prev is None:
        vel = Value(np.zeros(pos.shape))
    else:
        vel = (pos - prev.position) * (1.0 / config.dt)
    return SymbolicState(pos, vel)


def burn_in(obs, n: int, strategy: GainStrategy, codec: CodecParams,
            init_net: InitNet, config: SceneConfig) -> tuple[EstimatorState, list[FrameRecord]]:
    """Fuse ``n`` observed frames; returns the final state and one record per frame.

    ``obs`` is an :class:`ObservationBatch` or a list of :class:`Observation`.
    """
    obs = as_batch(obs)
    if n < 1:
        raise ValueError("burn-in needs at least one frame")
    if n > obs.num_frames:
        raise ValueError(f"burn-in of {n} frames but only {obs.num_frames} observed")
    s = lift_observation(obs, 0, init_net, config)
    records = [FrameRecord(0, s, None, s, None)]
    hidden = None
    learned = isinstance(strategy, LearnedGain)
    for t in range(1, n):
        s_pred = predict(s, config)
        s_obs = lift_observation(obs, t, init_net, config, prev=s, s_pred=s_pred)
        if learned:
            gain, hidden = compute_gain(strategy, encode(s_obs, codec), encode(s_pred, codec), hidden)
        else:
            gain, _ = compute_gain(strategy, None, None, shape=tuple(nv.data_of(s_obs.position).shape[:-1]) + (6,))
        s = fuse(s_pred, s_obs, gain)
        records.append(FrameRecord(t, s, s_pred, s_obs, gain))
    latent = encode(s, codec) if learned else None
    return EstimatorState(s, latent, hidden, n - 1), records


def rollout(state: EstimatorState | SymbolicState, m: int, config: SceneConfig) -> list[SymbolicState]:
    if m < 1:
        raise ValueError("rollout length must be positive")
    s = state.symbolic if isinstance(state, EstimatorState) else state
    out = []
    for _ in range(m):
        s = predict(s, config)
        out.append(s)
    return out


# ---------------------------------------------------------------- training

@dataclass
class TrainingData:
    """Episodes as stacked arrays; ground truth is only used by the supervised ablation."""

    positions: np.ndarray  # (E, T, N, 3)
    velocities: np.ndarray  # (E, T, N, 3)
    obs: ObservationBatch

    def __len__(self) -> int:
        return self.positions.shape[0]

    def subset(self, idx) -> "TrainingData":
        o = self.obs
        return TrainingData(self.positions[idx], self.velocities[idx], ObservationBatch(
            o.uv[idx], o.visible[idx], None if o.depth0 is None else o.depth0[idx],
            None if o.gt_z is None else o.gt_z[idx]))


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_size: int = 16
    learning_rate: float = 1e-3
    burn_in: int = 6
    unroll: int = 6
    use_obs_loss: bool = True
    supervised: bool = False
    weight_rec: float = 1.0
    weight_ae: float = 1.0
    weight_obs: float = 1.0
    log_every: int = 250


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    components: list[dict[str, float]] = field(default_factory=list)
    seconds: float = 0.0


def training_loss(model: Model, data: TrainingData, cfg: TrainConfig) -> tuple[Value, dict[str, Value]]:
    """Total loss over one burn-in + unroll window starting at frame 0."""
    needed = cfg.burn_in + cfg.unroll
    if data.obs.num_frames < needed:
        raise ValueError(f"episodes have {data.obs.num_frames} frames, need {needed}")
    state, records = burn_in(data.obs, cfg.burn_in, model.strategy, model.codec, model.init_net, model.scene)
    predicted = rollout(state, cfg.unroll, model.scene) if cfg.unroll else []
    positions = [as_value(r.s.position) for r in records] + [as_value(p.position) for p in predicted]
    # (B, T, N, 3) against frames 0 .. burn_in + unroll - 1
    rec = loss_rec_arrays(stack(positions, axis=1), data.obs.uv[:, :needed], data.obs.visible[:, :needed],
                          model.camera)
    if data.obs.depth0 is not None and model.init_net.mode is InitMode.SCREEN_PLUS_DEPTH:
        # the frame-0 depth map is observed too, so it is reconstructed alongside the screen coordinates
        rec = rec + loss_depth(records[0].s.position, data.obs.depth0, model.camera)
    fused = [r.s for r in records]
    stacked = SymbolicState(stack([as_value(f.position) for f in fused], axis=1),
                            stack([as_value(f.velocity) for f in fused], axis=1))
    ae = loss_ae(stacked, model.codec)
    terms = {"rec": rec, "ae": ae}
    weights = {"rec": cfg.weight_rec, "ae": cfg.weight_ae}
    if cfg.use_obs_loss and cfg.burn_in > 1:
        pred = SymbolicState(stack([as_value(r.s_pred.position) for r in records[1:]], axis=1),
                             stack([as_value(r.s_pred.velocity) for r in records[1:]], axis=1))
        seen = SymbolicState(stack([as_value(r.s_obs.position) for r in records[1:]], axis=1),
                             stack([as_value(r.s_obs.velocity) for r in records[1:]], axis=1))
        terms["obs"] = loss_obs(pred, seen)
        weights["obs"] = cfg.weight_obs
    if cfg.supervised:
        truth = SymbolicState(data.positions[:, :cfg.burn_in], data.velocities[:, :cfg.burn_in])
        terms["sup"] = loss_obs(stacked, truth)
        weights["sup"] = 1.0
    total = Value(0.0)
    for k, term in terms.items():
        total = total + term * weights[k]
    return total, terms


def train(model: Model, data: TrainingData, cfg: TrainConfig, rng: np.random.Generator,
          progress=None) -> TrainResult:
    """Adam on the combined loss over random episode batches; deterministic for a given rng."""
    params = model.parameters()
    opt = OptimizerState(lr=cfg.learning_rate)
    result = TrainResult()
    start = time.perf_counter()
    for step in range(cfg.steps):
        idx = rng.choice(len(data), size=min(cfg.batch_size, len(data)), replace=False)
        zero_grads(params.values())
        total, terms = training_loss(model, data.subset(np.sort(idx)), cfg)
        value = float(total.data)
        if not np.isfinite(value):
            raise NonFiniteLoss(step, value)
        backward(total)
        optimizer_step(opt, params)
        result.losses.append(value)
        result.components.append({k: float(v.data) for k, v in terms.items()})
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.4f %s", step, value,
                     " ".join(f"{k}={float(v.data):.4f}" for k, v in terms.items()))
        if progress is not None:
            progress(step, value)
    zero_grads(params.values())
    result.seconds = time.perf_counter() - start
    return result


@dataclass
class Evaluation:
    rollout_positions: np.ndarray  # (B, m, N, 3)
    burn_in_positions: np.ndarray  # (B, n, N, 3)
    gains: np.ndarray | None  # (B, n-1, N, 6)


def evaluate(model: Model, obs, burn_in_frames: int = 6, rollout_frames: int = 24) -> Evaluation:
    """Burn-in then rollout without gradients; arrays carry a leading episode axis."""
    obs = as_batch(obs).batched()
    with no_grad():
        state, records = burn_in(obs, burn_in_frames, model.strategy, model.codec, model.init_net, model.scene)
        preds = rollout(state, rollout_frames, model.scene) if rollout_frames else []
    burn = np.stack([nv.data_of(r.s.position) for r in records], axis=1)
    roll = (np.stack([nv.data_of(p.position) for p in preds], axis=1) if preds
            else np.zeros(burn.shape[:1] + (0,) + burn.shape[2:]))
    gains = None
    if len(records) > 1:
        gains = np.stack([np.broadcast_to(nv.data_of(r.gain), nv.data_of(r.s_obs.flat()).shape)
                          for r in records[1:]], axis=1)
    return Evaluation(roll, burn, gains)
