"""Run configuration: one JSON document, strict keys, named presets.

Section seeds are not configurable individually. They are derived from the
master ``seed`` so that ``--seed`` alone fixes every random stream.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .diffusion import PAPER_FINETUNE, SynthParams, TrainParams
from .errors import ConfigError
from .evaluator.classification import ClassifierHyper, CVConfig
from .evaluator.detection import DetConfig
from .phantom import PhantomConfig
from .seeding import derive_seed
from .segmenter import GrowParams

PRESETS = ("smoke", "desk", "paper-finetune")

# The original study's constants, echoed verbatim into every resolved config.
PAPER_CONSTANTS = {
    "finetune_learning_rate": 5e-6,
    "finetune_steps": 1000,
    "finetune_batch_size": 1,
    "guidance_scale": 7.5,
    "inference_steps": 100,
    "variants": 3,
    "oversample_factor": 4,
    "detector_epochs": 120,
    "detector_batch_size": 4,
    "detector_learning_rate": 0.005,
    "detector_momentum": 0.95,
}


@dataclass(frozen=True)
class DiffusionTrain:
    params: TrainParams = field(default_factory=TrainParams)
    resume: bool = False   # continue from models/denoiser.bin instead of a fresh init


@dataclass(frozen=True)
class MetricsConfig:
    extractor: ClassifierHyper = field(default_factory=ClassifierHyper)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    description: str = ""
    preset: str = "desk"
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    segmenter: GrowParams = field(default_factory=GrowParams)
    diffusion: DiffusionTrain = field(default_factory=DiffusionTrain)
    synth: SynthParams = field(default_factory=SynthParams)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    classification: CVConfig = field(default_factory=CVConfig)
    detection: DetConfig = field(default_factory=DetConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["paper"] = dict(PAPER_CONSTANTS)
        return d


# master-seed stream index per seeded section
_SEED_STREAMS = {"phantom": 1, "diffusion": 2, "synth": 3, "metrics": 4, "classification": 5,
                 "detection": 6}


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in fields(cls) if f.init}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        if is_dataclass(tp):
            kwargs[name] = _build(tp, value, f"{where}.{name}")
        elif typing.get_origin(tp) is tuple:
            kwargs[name] = tuple(value)
        elif tp is float and isinstance(value, int) and not isinstance(value, bool):
            kwargs[name] = float(value)
        elif tp in (int, float, str, bool) and not isinstance(value, tp):
            raise ConfigError(f"{where}.{name}: expected {tp.__name__}, got {value!r}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _deep_merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def preset_overrides(name: str) -> dict:
    if name == "desk":
        return {}
    if name == "smoke":
        return {
            "phantom": {"image_size": 32, "n_normal": 10, "n_lesion": 40},
            "diffusion": {"params": {"steps": 200}},
            "synth": {"inference_steps": 20, "output_size": 32},
        }
    if name == "paper-finetune":
        return {"diffusion": {"params": dict(PAPER_FINETUNE), "resume": True}}
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def _pop_seeds(data: dict) -> dict[str, int]:
    given = {}
    for section in _SEED_STREAMS:
        sub = data.get(section)
        if section == "diffusion" and isinstance(sub, dict):
            sub = sub.get("params")
        if isinstance(sub, dict) and "seed" in sub:
            given[section] = sub.pop("seed")
            if section == "classification" and isinstance(sub.get("classifier"), dict):
                sub["classifier"].pop("seed", None)
    if isinstance(data.get("metrics"), dict) and isinstance(data["metrics"].get("extractor"), dict) \
            and "seed" in data["metrics"]["extractor"]:
        given["metrics"] = data["metrics"]["extractor"].pop("seed")
    return given


def load_config(path: Path | None = None, preset: str | None = None, seed: int | None = None) -> RunConfig:
    """File values override the preset, which overrides the built-in defaults;
    ``seed`` overrides everything. Unknown keys raise :class:`ConfigError`.
    Section seeds may appear (as in a resolved echo) only with their derived value."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        data.pop("paper", None)  # an echoed resolved config may be fed back in
    given = _pop_seeds(data)
    name = preset or data.get("preset", "desk")
    merged = _deep_merge(preset_overrides(name), data)
    merged["preset"] = name
    if seed is not None:
        merged["seed"] = seed
    cfg = resolve(_build(RunConfig, merged, "config"))
    derived = {k: derive_seed(cfg.seed, v) for k, v in _SEED_STREAMS.items()}
    for section, value in given.items():
        if value != derived[section]:
            raise ConfigError(f"{section}.seed is derived from the master seed ({derived[section]}); "
                              "set the top-level 'seed' instead")
    return cfg


def resolve(cfg: RunConfig) -> RunConfig:
    """Fills section seeds from the master seed."""
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    s = {k: derive_seed(cfg.seed, v) for k, v in _SEED_STREAMS.items()}
    return replace(
        cfg,
        phantom=replace(cfg.phantom, seed=s["phantom"]),
        diffusion=replace(cfg.diffusion, params=replace(cfg.diffusion.params, seed=s["diffusion"])),
        synth=replace(cfg.synth, seed=s["synth"]),
        metrics=replace(cfg.metrics, extractor=replace(cfg.metrics.extractor, seed=s["metrics"])),
        classification=replace(cfg.classification, seed=s["classification"],
                               classifier=replace(cfg.classification.classifier,
                                                  seed=s["classification"])),
        detection=replace(cfg.detection, seed=s["detection"]),
    )


__all__ = ["PAPER_CONSTANTS", "PRESETS", "DiffusionTrain", "MetricsConfig", "RunConfig",
           "load_config", "preset_overrides", "resolve"]
