"""Run configuration: one JSON document driving data, architecture,
loss, training, and evaluation.

Validation is strict (unknown keys are rejected) and total: every
problem in the document is collected and reported in one error.  The
fully resolved configuration (defaults filled in) is echoed to
``config.resolved.json`` in the output directory, and feeding that file
back reproduces the run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .data import ENCODINGS, SPLIT_PRESETS
from .errors import ConfigError
from .losses import DISTANCES
from .models import ACTIVATIONS, ARCHITECTURES


@dataclass
class SyntheticConfig:
    n: int = 16
    seed: int = 0


@dataclass
class DataConfig:
    root: Optional[str] = None
    synthetic: Optional[SyntheticConfig] = None
    resolution: int = 64
    encoding: Optional[str] = None  # derived from the loss when omitted


@dataclass
class ArchSection:
    arch: str = "invertednet"
    activation: str = "elu"
    drop_probability: float = 0.1
    base_channels: Optional[int] = None
    init_seed: int = 0


@dataclass
class LossSection:
    distance: str = "dice"
    weighted: bool = True


@dataclass
class SplitSection:
    scheme: str = "fractions"
    preset: str = "60/7/33"
    fold: Optional[int] = None
    seed: int = 0


@dataclass
class TrainSection:
    epochs: int = 100
    batch_size: int = 2
    lr: float = 1e-5
    patience: int = 50
    seed: int = 0
    split: SplitSection = field(default_factory=SplitSection)


@dataclass
class EvalSection:
    epsilon: float = 0.25
    spacing: float = 1.0
    surface_distance: bool = True
    export_masks: bool = True
    overlays: bool = False


@dataclass
class OutputSection:
    directory: str = "runs/out"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    arch: ArchSection = field(default_factory=ArchSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)

    def resolved_encoding(self) -> str:
        if self.data.encoding is not None:
            return self.data.encoding
        return "entropy" if self.loss.distance == "cross_entropy" else "dice"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data"]["encoding"] = self.resolved_encoding()
        return d

    def echo(self, directory) -> Path:
        path = Path(directory) / "config.resolved.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


_SECTIONS = {
    "data": (DataConfig, {"synthetic": SyntheticConfig}),
    "arch": (ArchSection, {}),
    "loss": (LossSection, {}),
    "train": (TrainSection, {"split": SplitSection}),
    "eval": (EvalSection, {}),
    "output": (OutputSection, {}),
}


def _build_section(cls, nested, payload, where, errors):
    if not isinstance(payload, dict):
        errors.append(f"{where}: expected an object, got {type(payload).__name__}")
        return cls()
    fields = cls.__dataclass_fields__
    unknown = set(payload) - set(fields)
    for key in sorted(unknown):
        errors.append(f"{where}.{key}: unknown key")
    kwargs = {}
    for key, value in payload.items():
        if key in unknown:
            continue
        if key in nested and value is not None:
            kwargs[key] = _build_section(nested[key], {}, value, f"{where}.{key}", errors)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"{where}: {exc}")
        return cls()


def parse_run_config(payload: dict) -> RunConfig:
    """Validate a config document; all problems are reported together."""
    errors: list[str] = []
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(payload) - set(_SECTIONS)
    for key in sorted(unknown):
        errors.append(f"{key}: unknown section")
    sections = {}
    for name, (cls, nested) in _SECTIONS.items():
        sections[name] = _build_section(cls, nested, payload.get(name, {}), name, errors)
    cfg = RunConfig(**sections)

    data, arch, loss, tr = cfg.data, cfg.arch, cfg.loss, cfg.train
    if data.root is None and data.synthetic is None:
        errors.append("data: either data.root or data.synthetic is required")
    if data.root is not None and data.synthetic is not None:
        errors.append("data: data.root and data.synthetic are mutually exclusive")
    if data.resolution % 16 != 0 or data.resolution <= 0:
        errors.append(f"data.resolution: must be a positive multiple of 16, got {data.resolution}")
    if data.encoding is not None and data.encoding not in ENCODINGS:
        errors.append(f"data.encoding: {data.encoding!r} not one of {ENCODINGS}")
    if data.synthetic is not None and data.synthetic.n < 1:
        errors.append(f"data.synthetic.n: must be >= 1, got {data.synthetic.n}")
    if arch.arch not in ARCHITECTURES:
        errors.append(f"arch.arch: {arch.arch!r} not one of {ARCHITECTURES}")
    if arch.activation not in ACTIVATIONS:
        errors.append(f"arch.activation: {arch.activation!r} not one of {ACTIVATIONS}")
    if not 0.0 <= arch.drop_probability < 1.0:
        errors.append(f"arch.drop_probability: must be in [0, 1), got {arch.drop_probability}")
    if loss.distance not in DISTANCES:
        errors.append(f"loss.distance: {loss.distance!r} not one of {DISTANCES}")
    if loss.distance == "cross_entropy" and cfg.resolved_encoding() != "entropy":
        errors.append("loss/data: cross_entropy requires the 'entropy' encoding")
    if loss.distance == "dice" and cfg.resolved_encoding() != "dice":
        errors.append("loss/data: dice requires the 'dice' encoding")
    if tr.epochs < 1:
        errors.append(f"train.epochs: must be >= 1, got {tr.epochs}")
    if tr.batch_size < 1:
        errors.append(f"train.batch_size: must be >= 1, got {tr.batch_size}")
    if tr.split.scheme not in ("fractions", "threefold"):
        errors.append(f"train.split.scheme: {tr.split.scheme!r} not one of ('fractions', 'threefold')")
    if tr.split.preset not in SPLIT_PRESETS:
        errors.append(f"train.split.preset: {tr.split.preset!r} not one of {sorted(SPLIT_PRESETS)}")
    if tr.split.scheme == "threefold" and tr.split.fold not in (0, 1, 2):
        errors.append(f"train.split.fold: threefold needs fold in (0, 1, 2), got {tr.split.fold}")
    if not 0.0 < cfg.eval.epsilon < 1.0:
        errors.append(f"eval.epsilon: must be in (0, 1), got {cfg.eval.epsilon}")
    if cfg.eval.spacing <= 0:
        errors.append(f"eval.spacing: must be positive, got {cfg.eval.spacing}")

    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return cfg


def load_run_config(path) -> RunConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    return parse_run_config(payload)
