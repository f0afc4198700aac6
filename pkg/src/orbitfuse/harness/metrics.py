"""Position MAE and the persisted metrics report."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..nnkit import value as nv

REPORT_VERSION = 1


class LengthMismatch(ValueError):
    pass


def _positions(seq) -> np.ndarray:
    """Accept a list of SymbolicState / position arrays, or an already stacked array."""
    if isinstance(seq, np.ndarray):
        return seq
    if len(seq) == 0:
        return np.zeros((0, 0, 3))
    return np.stack([np.asarray(nv.data_of(getattr(s, "position", s)), dtype=np.float64) for s in seq])


def position_errors(predicted, truth) -> np.ndarray:
    """Absolute per-coordinate position errors, shape ``(..., T, N, 3)``."""
    p, t = _positions(predicted), _positions(truth)
    if p.shape != t.shape:
        raise LengthMismatch(f"predicted {p.shape} vs truth {t.shape}")
    return np.abs(p - t)


def position_mae(predicted, truth) -> float:
    """Mean over frames, objects and the three coordinates of absolute position error."""
    err = position_errors(predicted, truth)
    if err.size == 0:
        return 0.0
    return float(err.mean())


def config_fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class MetricsReport:
    position_mae: float
    per_frame_mae: list[float]
    per_axis_mae: list[float]
    burn_in_mae: float
    gain_stats: dict[str, float] = field(default_factory=dict)
    runtime_seconds: float = 0.0
    config: dict = field(default_factory=dict)
    fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_errors(cls, rollout_err: np.ndarray, burn_err: np.ndarray, gains: np.ndarray | None,
                    config: dict, runtime: float = 0.0, extra: dict | None = None) -> "MetricsReport":
        """``rollout_err``/``burn_err`` are absolute errors ``(E, T, N, 3)``; gains ``(E, n-1, N, 6)``."""
        per_frame = rollout_err.mean(axis=(0, 2, 3))
        stats = {}
        if gains is not None and gains.size:
            stats = {"k_position_mean": float(gains[..., :3].mean()),
                     "k_velocity_mean": float(gains[..., 3:].mean())}
        return cls(position_mae=float(per_frame.mean()) if per_frame.size else 0.0,
                   per_frame_mae=[float(x) for x in per_frame],
                   per_axis_mae=[float(x) for x in rollout_err.mean(axis=(0, 1, 2))],
                   burn_in_mae=float(burn_err.mean()) if burn_err.size else 0.0,
                   gain_stats=stats, runtime_seconds=float(runtime), config=config,
                   fingerprint=config_fingerprint(config), extra=dict(extra or {}))

    def z_share(self) -> float:
        """Fraction of the rollout error carried by the z axis."""
        total = sum(self.per_axis_mae)
        return self.per_axis_mae[2] / total if total > 0 else 0.0

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = {"version": REPORT_VERSION, "position_mae": self.position_mae,
             "per_frame_mae": self.per_frame_mae, "per_axis_mae": self.per_axis_mae,
             "burn_in_mae": self.burn_in_mae, "gain_stats": self.gain_stats,
             "config": self.config, "fingerprint": self.fingerprint, "extra": self.extra}
        if include_runtime:
            d["runtime_seconds"] = self.runtime_seconds
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(d["position_mae"], list(d["per_frame_mae"]), list(d["per_axis_mae"]), d["burn_in_mae"],
                   dict(d.get("gain_stats", {})), d.get("runtime_seconds", 0.0), dict(d.get("config", {})),
                   d.get("fingerprint", ""), dict(d.get("extra", {})))

    def dumps(self, include_runtime: bool = False) -> str:
        # wall-clock time is left out by default so identical runs give identical bytes
        return json.dumps(self.to_dict(include_runtime), indent=2, sort_keys=True) + "\n"

    def save(self, path, include_runtime: bool = False) -> None:
        Path(path).write_text(self.dumps(include_runtime))

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))
