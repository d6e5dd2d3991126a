"""MPJPE evaluation under the per-frame and averaged protocols, plus ablations."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import Dataset, to_pose_matrix, from_pose_matrix
from .errors import ConfigError, ProtocolError
from .network import LAYOUTS, SETTINGS, Model, NetworkConfig, init_parameters
from .training import TrainConfig, train

PER_FRAME = "per-frame"
AVERAGED = "averaged"
HORIZONS_MS = (80, 160, 320, 400, 560, 720, 880, 1000)
ARCHITECTURES = tuple(l for l in LAYOUTS if l != "default")


def ms_to_frame(ms: float, frame_rate: float = 25.0, max_frame: Optional[int] = None) -> int:
    """1-based frame index of a horizon, rounding half up."""
    if not ms > 0:
        raise ProtocolError(f"horizon must be > 0 ms, got {ms}")
    frame = max(1, int(math.floor(ms * frame_rate / 1000.0 + 0.5)))
    if max_frame is not None and frame > max_frame:
        raise ProtocolError(f"horizon {ms} ms maps to frame {frame} beyond the {max_frame}-frame output")
    return frame


@dataclass
class EvalProtocol:
    mode: str = PER_FRAME
    horizons: tuple = HORIZONS_MS
    frame_rate: float = 25.0

    def __post_init__(self):
        if self.mode not in (PER_FRAME, AVERAGED):
            raise ProtocolError(f"protocol mode must be {PER_FRAME!r} or {AVERAGED!r}, got {self.mode!r}")
        self.horizons = tuple(self.horizons)
        if not self.horizons or list(self.horizons) != sorted(self.horizons):
            raise ProtocolError("horizons must be a non-empty ascending list")

    @classmethod
    def for_output(cls, output_frames: int, mode: str = PER_FRAME, frame_rate: float = 25.0):
        """Keep the standard horizons that fit inside the output window."""
        hs = tuple(h for h in HORIZONS_MS if ms_to_frame(h, frame_rate) <= output_frames)
        if not hs:
            hs = (1000.0 * output_frames / frame_rate,)
        return cls(mode, hs, frame_rate)


@dataclass
class MetricsReport:
    horizons: tuple
    frames: tuple
    values: tuple
    samples: int
    protocol: str
    fingerprint: str = ""
    per_frame: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if any(not (np.isfinite(v) and v >= 0) for v in self.values):
            raise ProtocolError("metric values must be finite and nonnegative")

    def as_dict(self) -> dict:
        return {"protocol": self.protocol, "samples": self.samples, "fingerprint": self.fingerprint,
                "mpjpe_mm": {str(h): v for h, v in zip(self.horizons, self.values)}}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ms", "frame", "mpjpe_mm", "protocol", "samples"])
        for h, f, v in zip(self.horizons, self.frames, self.values):
            w.writerow([f"{h:g}", f, f"{v:.6f}", self.protocol, self.samples])
        return buf.getvalue()


def fingerprint(model: Model) -> str:
    cfg = json.dumps(model.config.to_json(), sort_keys=True).encode()
    return hashlib.sha256(cfg + model.checksum().encode()).hexdigest()[:16]


def per_frame_errors(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Mean joint error per output frame, averaged over samples: shape ``(T_f,)``."""
    err = np.linalg.norm(np.asarray(predictions) - np.asarray(targets), axis=-1)
    return err.mean(axis=(0, 2))


def predict_dataset(model: Model, dataset: Dataset, chunk: int = 256) -> np.ndarray:
    outs = []
    for i in range(0, len(dataset), chunk):
        x = to_pose_matrix(dataset.inputs[i:i + chunk])
        outs.append(from_pose_matrix(model.forward_matrix(x).data))
    return np.concatenate(outs)


def report_from_errors(errors: np.ndarray, samples: int, protocol: EvalProtocol,
                       tag: str = "") -> MetricsReport:
    t_f = len(errors)
    frames = tuple(ms_to_frame(h, protocol.frame_rate, t_f) for h in protocol.horizons)
    if protocol.mode == PER_FRAME:
        values = tuple(float(errors[f - 1]) for f in frames)
    else:
        values = tuple(float(errors[:f].mean()) for f in frames)
    return MetricsReport(protocol.horizons, frames, values, samples, protocol.mode, tag,
                         np.asarray(errors))


def evaluate(model: Model, dataset: Dataset, protocol: EvalProtocol) -> MetricsReport:
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    t_f = model.config.output_frames
    for h in protocol.horizons:
        ms_to_frame(h, protocol.frame_rate, t_f)
    errors = per_frame_errors(predict_dataset(model, dataset), dataset.targets)
    return report_from_errors(errors, len(dataset), protocol, fingerprint(model))


def guidance_probe(model: Model, dataset: Dataset, protocol: EvalProtocol):
    """Evaluate the model as trained and with every aggregation zeroed."""
    return evaluate(model, dataset, protocol), evaluate(model.zero_guidance(), dataset, protocol)


# -- ablations -----------------------------------------------------------------


def variant_config(base: NetworkConfig, label: str, seed: int) -> NetworkConfig:
    if label in SETTINGS:
        return replace(base, variant=label, layout="default", seed=seed)
    if label in LAYOUTS:
        return replace(base, variant="abcdef", layout=label, seed=seed)
    raise ConfigError(f"unknown ablation setting {label!r}; expected one of {SETTINGS + ARCHITECTURES}")


@dataclass
class AblationResult:
    reports: dict  # label -> list of MetricsReport, one per seed
    seeds: tuple
    models: dict = field(default_factory=dict, repr=False)  # label -> trained models

    def final_horizon(self, label: str) -> list:
        return [r.values[-1] for r in self.reports[label]]

    def summary(self) -> dict:
        out = {}
        for label, reps in self.reports.items():
            out[label] = {
                "seeds": list(self.seeds),
                "horizons_ms": list(reps[0].horizons),
                "mpjpe_mm": [list(r.values) for r in reps],
                "mean_mpjpe_mm": [float(np.mean([r.values[k] for r in reps]))
                                  for k in range(len(reps[0].values))],
            }
        return out


def ablation_suite(base: NetworkConfig, train_data: Dataset, test_data: Dataset,
                   settings: Iterable[str], train_cfg: TrainConfig,
                   seeds: Sequence[int] = (0, 1, 2),
                   protocol: Optional[EvalProtocol] = None) -> AblationResult:
    """Train and evaluate every requested variant once per seed."""
    settings = list(settings)
    for label in settings:
        variant_config(base, label, 0)
    protocol = protocol or EvalProtocol.for_output(base.output_frames)
    reports, models = {}, {}
    for label in settings:
        reports[label], models[label] = [], []
        for seed in seeds:
            model = init_parameters(variant_config(base, label, seed))
            train(model, train_data, replace(train_cfg, seed=seed))
            reports[label].append(evaluate(model, test_data, protocol))
            models[label].append(model)
    return AblationResult(reports, tuple(seeds), models)
