"""Run configuration: a plain ``section.key = value`` text format.

Precedence, lowest first: built-in defaults, the config file, ``--set`` flags.

Sections::

    model.*           EatConfig fields (tuples as comma lists: model.downsample_factors = 4,4,4,4)
    train.*           TrainConfig fields
    stft.*            n_fft, hop, centered
    augment.enabled   master switch for label-preserving transforms
    augment.probability            default per-stage probability
    augment.<stage>.probability    per-stage override (0 disables the stage)
    augment.<stage>.<param>        parameter ranges, e.g. augment.noise.snr_db = 10,40
    mix.kinds         subset of mixup,timemix,freqmix,phasemix (empty disables mixing)
    mix.probability
    data.manifest, data.audio_root, data.duration_s, data.sample_rate, data.eval_fold
    run.mode          kfold | split
    run.output_dir, run.threads, run.checkpoint_every

Parameter ranges for the label-preserving transforms are working defaults, not
published values; see ``augment.DEFAULT_PARAMS``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .augment import DEFAULT_PARAMS, TRANSFORMS, AugmentSpec
from .mix import MixKind, MixPolicy
from .model import EatConfig
from .signal import StftConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def parse_text(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        out[key] = value
    return out


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        out[key] = value
    return out


def _scalar(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_value(text: str):
    """Comma lists become tuples; numbers and booleans are converted."""
    if "," in text:
        return tuple(_scalar(s.strip()) for s in text.split(",") if s.strip())
    return _scalar(text)


def _coerce(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            v = _scalar(value)
            if not isinstance(v, bool):
                raise ValueError
            return v
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(int(s) for s in value.split(",") if s.strip())
        if default is None:
            return None if value.lower() in ("", "none") else _scalar(value)
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None


def _fill(cls, section: str, values: dict[str, str], base=None):
    base = base if base is not None else cls()
    known = {f.name: getattr(base, f.name) for f in fields(cls)}
    kwargs = dict(known)
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
        kwargs[key] = _coerce(value, known[key], f"{section}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}] {e}") from e


@dataclass
class DataConfig:
    manifest: str = ""
    audio_root: str = ""
    duration_s: float = 5.0
    sample_rate: int = 22050
    eval_fold: int = 0  # used when run.mode = split; 0 means the last fold


@dataclass
class RunOptions:
    mode: str = "kfold"
    output_dir: str = "runs/default"
    threads: int = 1
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.mode not in ("kfold", "split"):
            raise ValueError(f"run.mode must be kfold or split, got {self.mode!r}")
        if self.threads < 1:
            raise ValueError("run.threads must be >= 1")


@dataclass
class RunConfig:
    model: EatConfig = field(default_factory=EatConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    augment_enabled: bool = True
    augment: list[AugmentSpec] = field(default_factory=list)
    mix: MixPolicy = field(default_factory=MixPolicy)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunOptions = field(default_factory=RunOptions)
    source: dict[str, str] = field(default_factory=dict)

    def pipeline_specs(self) -> list[AugmentSpec]:
        return [s for s in self.augment if s.probability > 0] if self.augment_enabled else []

    def to_text(self) -> str:
        """Fully resolved config in the same key = value format."""
        lines = []
        for section, obj in (("model", self.model), ("train", self.train), ("stft", self.stft),
                             ("data", self.data), ("run", self.run)):
            for f in fields(obj):
                if section == "stft" and f.name == "window":
                    continue
                lines.append(f"{section}.{f.name} = {_fmt(getattr(obj, f.name))}")
        lines.append(f"augment.enabled = {_fmt(self.augment_enabled)}")
        for spec in self.augment:
            lines.append(f"augment.{spec.name}.probability = {_fmt(spec.probability)}")
            for k, v in spec.params.items():
                lines.append(f"augment.{spec.name}.{k} = {_fmt(v)}")
        lines.append(f"mix.kinds = {','.join(k.value for k in self.mix.kinds) or 'none'}")
        lines.append(f"mix.probability = {_fmt(self.mix.probability)}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def build_run_config(values: dict[str, str]) -> RunConfig:
    sections: dict[str, dict[str, str]] = {}
    for key, value in values.items():
        if "." not in key:
            raise ConfigError(f"key {key!r} has no section")
        section, rest = key.split(".", 1)
        sections.setdefault(section, {})[rest] = value
    unknown = set(sections) - {"model", "train", "stft", "augment", "mix", "data", "run"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    model = _fill(EatConfig, "model", sections.get("model", {}))
    train = _fill(TrainConfig, "train", sections.get("train", {}))
    stft_vals = sections.get("stft", {})
    bad = set(stft_vals) - {"n_fft", "hop", "centered"}
    if bad:
        raise ConfigError(f"unknown stft keys: {sorted(bad)}")
    try:
        hop = stft_vals.get("hop", "none")
        stft = StftConfig(int(stft_vals.get("n_fft", 1024)), None if hop.lower() == "none" else int(hop),
                          centered=_coerce(stft_vals.get("centered", "true"), True, "stft.centered"))
    except ValueError as e:
        raise ConfigError(f"[stft] {e}") from e
    data = _fill(DataConfig, "data", sections.get("data", {}))
    run = _fill(RunOptions, "run", sections.get("run", {}))

    aug_vals = dict(sections.get("augment", {}))
    enabled = _coerce(aug_vals.pop("enabled", "true"), True, "augment.enabled")
    default_p = _coerce(aug_vals.pop("probability", "0.5"), 0.5, "augment.probability")
    per_stage: dict[str, dict[str, str]] = {}
    for key, value in aug_vals.items():
        if "." not in key:
            raise ConfigError(f"unknown key augment.{key}")
        stage, param = key.split(".", 1)
        if stage not in TRANSFORMS:
            raise ConfigError(f"unknown augmentation stage {stage!r}")
        if param != "probability" and param not in DEFAULT_PARAMS[stage]:
            raise ConfigError(f"unknown parameter augment.{stage}.{param}")
        per_stage.setdefault(stage, {})[param] = value
    specs = []
    for stage in TRANSFORMS:
        vals = dict(per_stage.get(stage, {}))
        p = _coerce(vals.pop("probability", str(default_p)), 0.5, f"augment.{stage}.probability")
        params = {}
        for k, v in vals.items():
            parsed = parse_value(v)
            if isinstance(DEFAULT_PARAMS[stage][k], tuple) and not isinstance(parsed, tuple):
                parsed = (parsed,)
            params[k] = parsed
        try:
            specs.append(AugmentSpec(stage, params, p))
        except ValueError as e:
            raise ConfigError(f"[augment.{stage}] {e}") from e

    mix_vals = sections.get("mix", {})
    bad = set(mix_vals) - {"kinds", "probability"}
    if bad:
        raise ConfigError(f"unknown mix keys: {sorted(bad)}")
    kinds_text = mix_vals.get("kinds", ",".join(k.value for k in MixKind))
    kinds = () if kinds_text.strip().lower() in ("", "none") else tuple(s.strip() for s in kinds_text.split(","))
    try:
        mix = MixPolicy(tuple(MixKind(k) for k in kinds),
                        _coerce(mix_vals.get("probability", "0.5"), 0.5, "mix.probability"), stft)
    except ValueError as e:
        raise ConfigError(f"[mix] {e}") from e
    return RunConfig(model, train, stft, enabled, specs, mix, data, run, dict(values))


def load_run_config(path=None, overrides=None) -> RunConfig:
    values = parse_text(Path(path).read_text()) if path else {}
    values.update(parse_overrides(overrides))
    return build_run_config(values)


def replace_model(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, **changes))
