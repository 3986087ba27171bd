"""Run configuration: training, dataset and evaluation sections in one JSON file.

Example::

    {
      "version": 1,
      "train": {"mode": "fixedpoint_delta", "total_iterations": 5000, ...},
      "dataset": {"kind": "lesion", "train": {...}, "test": {...}},
      "evaluation": {"k": 2, "min_area": 10, "froc_target": 1.0},
      "output_dir": "runs/lesion"
    }

``dataset.kind`` is ``lesion`` or ``attr`` (procedural, ``train``/``test``
hold generator specs) or ``manifest`` (``train``/``test`` are CSV paths).
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import (
    SynthAttrSpec,
    SynthLesionSpec,
    generate_attr_dataset,
    generate_lesion_dataset,
    load_manifest,
    read_manifest_images,
    ATTRIBUTE_NAMES,
)
from .models import ConfigError
from .training import TrainConfig

CONFIG_VERSION = 1


@dataclass(frozen=True)
class EvalConfig:
    k: int = 2
    min_area: int = 10
    froc_target: float = 1.0

    def __post_init__(self):
        if self.k < 2 or self.min_area < 0 or self.froc_target <= 0:
            raise ConfigError("evaluation needs k >= 2, min_area >= 0, froc_target > 0")


@dataclass
class DatasetConfig:
    kind: str = "lesion"
    train: dict | str = field(default_factory=dict)
    test: dict | str = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("lesion", "attr", "manifest"):
            raise ConfigError(f"dataset.kind must be lesion, attr or manifest, got {self.kind!r}")
        if self.kind == "manifest":
            if not isinstance(self.train, str) or not isinstance(self.test, str):
                raise ConfigError("manifest datasets need train/test manifest paths")
        else:
            spec_cls = SynthLesionSpec if self.kind == "lesion" else SynthAttrSpec
            for part in (self.train, self.test):
                if not isinstance(part, dict):
                    raise ConfigError("procedural datasets need train/test spec objects")
                _build(spec_cls, part).validate()

    def _spec(self, part):
        spec = self.train if part == "train" else self.test
        if self.kind == "lesion":
            return _build(SynthLesionSpec, spec)
        return _build(SynthAttrSpec, spec)

    def load(self, part: str):
        """Images for ``part`` ('train' or 'test') and the attribute names."""
        if self.kind == "manifest":
            manifest = load_manifest(self.train if part == "train" else self.test)
            return read_manifest_images(manifest), manifest.attribute_names
        spec = self._spec(part)
        if self.kind == "lesion":
            return generate_lesion_dataset(spec), ["diseased"]
        return generate_attr_dataset(spec), list(spec.attributes)

    def to_dict(self) -> dict:
        if self.kind == "manifest":
            return {"kind": self.kind, "train": self.train, "test": self.test}
        return {
            "kind": self.kind,
            "train": _spec_dict(self._spec("train")),
            "test": _spec_dict(self._spec("test")),
        }


def _spec_dict(spec) -> dict:
    d = asdict(spec)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _build(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = dict(d)
    for key in ("lesion_radius_range", "attributes"):
        if key in kw:
            kw[key] = tuple(kw[key])
    return cls(**kw)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs/default"
    version: int = CONFIG_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "train": self.train.to_dict(),
            "dataset": self.dataset.to_dict(),
            "evaluation": asdict(self.evaluation),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict, overrides: dict | None = None) -> "RunConfig":
        """Validate ``d``, apply dotted-key ``overrides`` and the ``FPGAN_SEED`` env var."""
        d = json.loads(json.dumps(d))
        top = {"version", "train", "dataset", "evaluation", "output_dir"}
        unknown = set(d) - top
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        version = d.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            node = d
            *parents, leaf = key.split(".")
            for p in parents:
                node = node.setdefault(p, {})
            node[leaf] = value
        env_seed = os.environ.get("FPGAN_SEED")
        if env_seed is not None:
            try:
                d.setdefault("train", {})["seed"] = int(env_seed)
            except ValueError:
                raise ConfigError(f"FPGAN_SEED must be an integer, got {env_seed!r}") from None
        train = d.get("train", {})
        if not isinstance(train, dict):
            raise ConfigError("train section must be an object")
        evaluation = d.get("evaluation", {})
        try:
            return cls(
                train=TrainConfig.from_dict(train),
                dataset=DatasetConfig(**d.get("dataset", {})),
                evaluation=_build(EvalConfig, evaluation),
                output_dir=d.get("output_dir", "runs/default"),
                version=version,
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(raw, overrides)


def write_resolved(cfg: RunConfig | dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.json"
    data = cfg.to_dict() if hasattr(cfg, "to_dict") else cfg
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def is_attribute_dataset(names) -> bool:
    return len(names) > 0 and set(names) <= set(ATTRIBUTE_NAMES)
