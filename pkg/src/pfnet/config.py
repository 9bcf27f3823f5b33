"""Experiment configuration: profiles, JSON loading and a stable hash.

A config file is a JSON object whose sections override a base profile::

    {
      "profile": "desk",              # or "paper"
      "front_end": "pfnet",           # pfnet | sincnet | raw_fir
      "filter": {"num_filters": 32, "kernel_len": 251, "num_deform_points": 5},
      "head": {"conv_channels": 16, "dense_width": 128},
      "optim": {"lr": 0.001, "alpha": 0.95, "epsilon": 1e-7, "batch_size": 32},
      "data": {"synth": {"n_classes": 20, "duration": [1.0, 2.0]}},
      "frames": {"window_ms": 100, "hop_ms": 100, "trim_db": -40},
      "train": {"epochs": 12, "eval_every": 1, "seed": 0, "dtype": "float32"},
      "output_dir": "runs/pfnet"
    }

``data`` holds exactly one of ``synth`` (a synthetic corpus recipe) or
``manifest`` (path to a corpus manifest CSV).  ``head.num_classes`` and
``filter.sample_rate`` are filled from the data source.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .data import SynthSpec
from .errors import ConfigError
from .filters import FilterSpec
from .frontends import FRONT_ENDS
from .nn import HeadConfig, OptimizerConfig

DTYPES = ("float32", "float64")
VOTE_RULES = ("mean", "majority")


@dataclass(frozen=True)
class FrameConfig:
    window_ms: float = 200.0
    hop_ms: float = 10.0
    trim_db: float = -40.0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    eval_every: int = 1
    seed: int = 0
    dtype: str = "float64"
    accuracy_threshold: float = 95.0
    vote: str = "mean"
    freeze: tuple = ()

    def __post_init__(self):
        if self.epochs < 0 or self.eval_every < 1:
            raise ConfigError("epochs must be >= 0 and eval_every >= 1")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}")
        if self.vote not in VOTE_RULES:
            raise ConfigError(f"vote must be one of {VOTE_RULES}")


@dataclass(frozen=True)
class ExperimentConfig:
    front_end: str
    filter: FilterSpec
    head: HeadConfig
    optim: OptimizerConfig
    frames: FrameConfig
    train: TrainConfig
    synth: SynthSpec | None = None
    manifest: str | None = None
    output_dir: str = "runs/default"
    profile: str = "desk"

    def __post_init__(self):
        if self.front_end not in FRONT_ENDS:
            raise ConfigError(f"front_end must be one of {FRONT_ENDS}, got {self.front_end!r}")
        if (self.synth is None) == (self.manifest is None):
            raise ConfigError("exactly one data source (synth or manifest) is required")
        if self.front_end != "pfnet" and self.filter.num_deform_points:
            # deformation points only exist for pfnet; normalizing keeps the hash honest
            object.__setattr__(self, "filter", replace(self.filter, num_deform_points=0))
        if self.synth is not None and self.synth.sample_rate != self.filter.sample_rate:
            raise ConfigError("filter.sample_rate must match the corpus sample rate")
        if self.synth is not None and self.head.num_classes != self.synth.n_classes:
            raise ConfigError("head.num_classes must match the number of corpus classes")

    def to_dict(self):
        d = {
            "profile": self.profile,
            "front_end": self.front_end,
            "filter": asdict(self.filter),
            "head": asdict(self.head),
            "optim": asdict(self.optim),
            "frames": asdict(self.frames),
            "train": {**asdict(self.train), "freeze": list(self.train.freeze)},
            "data": {"synth": _synth_dict(self.synth)} if self.synth else {"manifest": self.manifest},
            "output_dir": self.output_dir,
        }
        return d

    def config_hash(self, ignore=()):
        """SHA-256 over the canonical resolved config, ignoring where outputs go.

        ``ignore`` names extra dotted keys to leave out, e.g. ``"train.epochs"``.
        """
        d = self.to_dict()
        d.pop("output_dir")
        for key in ignore:
            section, _, name = key.partition(".")
            (d[section] if name else d).pop(name or section, None)
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _synth_dict(s: SynthSpec):
    d = asdict(s)
    d["duration"] = list(s.duration)
    if s.formants is not None:
        d["formants"] = [list(f) for f in s.formants]
    return d


PROFILES = {
    # minutes on one laptop core
    "desk": {
        "front_end": "pfnet",
        "filter": {"num_filters": 32, "kernel_len": 251, "num_deform_points": 5},
        "head": {"conv_layers": 2, "conv_channels": 16, "conv_kernel": 5, "pool_width": 3,
                 "dense_layers": 3, "dense_width": 128, "lrelu_slope": 0.2},
        "optim": {"lr": 1e-3, "alpha": 0.95, "epsilon": 1e-7, "batch_size": 32},
        "data": {"synth": {"n_classes": 20, "utterances_per_class": 10, "test_per_class": 4,
                           "duration": [1.0, 2.0], "sample_rate": 8000, "seed": 0}},
        "frames": {"window_ms": 100.0, "hop_ms": 100.0, "trim_db": -40.0},
        "train": {"epochs": 12, "eval_every": 1, "seed": 0, "dtype": "float32"},
    },
    # full-size recipe
    "paper": {
        "front_end": "pfnet",
        "filter": {"num_filters": 80, "kernel_len": 251, "num_deform_points": 5},
        "head": {"conv_layers": 2, "conv_channels": 60, "conv_kernel": 5, "pool_width": 3,
                 "dense_layers": 3, "dense_width": 2048, "lrelu_slope": 0.2},
        "optim": {"lr": 1e-3, "alpha": 0.95, "epsilon": 1e-7, "batch_size": 128},
        "data": {"synth": {"n_classes": 40, "utterances_per_class": 8, "test_per_class": 3,
                           "duration": [2.0, 6.0], "sample_rate": 16000, "seed": 0}},
        "frames": {"window_ms": 200.0, "hop_ms": 10.0, "trim_db": -40.0},
        "train": {"epochs": 50, "eval_every": 1, "seed": 0, "dtype": "float32"},
    },
}

# a checkpoint may be resumed under any epoch budget or evaluation cadence
RESUME_IGNORES = ("train.epochs", "train.eval_every")

_SECTIONS = {"profile", "front_end", "filter", "head", "optim", "data", "frames", "train", "output_dir"}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "data":
            out[k] = _merge(out[k], v, f"{path}{k}.")
        elif k == "data" and isinstance(v, dict) and set(v) == {"synth"} and isinstance(out.get("data", {}).get("synth"), dict):
            out["data"] = {"synth": {**out["data"]["synth"], **v["synth"]}}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _build(cls, section, values, **extra):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    try:
        return cls(**{**values, **extra})
    except TypeError as e:
        raise ConfigError(f"[{section}]: {e}") from e


def from_dict(d: dict) -> ExperimentConfig:
    """Resolve a (possibly partial) config dict against its profile."""
    unknown = set(d) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    profile = d.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    merged = _merge(PROFILES[profile], d)
    data = merged.get("data", {})
    if set(data) - {"synth", "manifest"} or len(data) != 1:
        raise ConfigError("data must hold exactly one of 'synth' or 'manifest'")
    synth = manifest = None
    if "synth" in data:
        sd = dict(data["synth"])
        sd["duration"] = tuple(sd.get("duration", (2.0, 6.0)))
        if sd.get("formants") is not None:
            sd["formants"] = tuple(tuple(f) for f in sd["formants"])
        synth = _build(SynthSpec, "data.synth", sd)
        fs, n_classes = synth.sample_rate, synth.n_classes
    else:
        manifest = str(data["manifest"])
        fs = merged["filter"].get("sample_rate")
        n_classes = merged["head"].get("num_classes")
        if fs is None or n_classes is None:
            raise ConfigError("manifest configs must set filter.sample_rate and head.num_classes")
    # a synthetic corpus dictates sample rate and class count
    filt = {**merged["filter"], "sample_rate": fs}
    head = {**merged["head"], "num_classes": n_classes}
    train = dict(merged.get("train", {}))
    train["freeze"] = tuple(train.get("freeze", ()))
    return ExperimentConfig(
        front_end=merged.get("front_end", "pfnet"),
        filter=_build(FilterSpec, "filter", filt),
        head=_build(HeadConfig, "head", head),
        optim=_build(OptimizerConfig, "optim", merged.get("optim", {})),
        frames=_build(FrameConfig, "frames", merged.get("frames", {})),
        train=_build(TrainConfig, "train", train),
        synth=synth,
        manifest=manifest,
        output_dir=merged.get("output_dir", "runs/default"),
        profile=profile,
    )


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
    return from_dict(_merge(d, overrides or {}))


def with_overrides(cfg: ExperimentConfig, **sections) -> ExperimentConfig:
    """Re-resolve ``cfg`` with section overrides, e.g. ``train={"epochs": 3}``."""
    return from_dict(_merge(cfg.to_dict(), sections))


__all__ = ["ExperimentConfig", "FrameConfig", "PROFILES", "RESUME_IGNORES", "TrainConfig", "from_dict", "load_config",
           "with_overrides"]
