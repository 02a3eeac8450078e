"""Experiment configuration read from INI-style files.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` and
``;`` start comments. Lists are comma-separated. Unknown sections or keys are
rejected so typos surface early. Every key has a default, so an empty file is
a valid (IID Laplace LLR) experiment.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

SCENARIOS = ("iid", "composite", "image")
STATISTICS = ("llr", "d3f")


def _floats(s):
    return tuple(float(v) for v in str(s).split(",") if v.strip())


def _ints(s):
    return tuple(int(float(v)) for v in str(s).split(",") if v.strip())


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if str(s).strip().lower() in ("", "none") else float(s)


def _opt_int(s):
    return None if str(s).strip().lower() in ("", "none") else int(s)


# field -> (section, parser)
SCHEMA = {
    "scenario": ("experiment", str),
    "statistic": ("experiment", str),
    "seed": ("experiment", int),
    "out_dir": ("experiment", str),
    "overlap": ("experiment", _bool),
    "family": ("model", str),
    "theta0": ("model", float),
    "theta1": ("model", float),
    "thetas": ("model", _floats),
    "prior": ("model", _floats),
    "theta_true": ("model", _floats),
    "scale": ("model", float),
    "width": ("image", int),
    "height": ("image", int),
    "p0": ("image", float),
    "p1": ("image", float),
    "test_p0": ("image", _opt_float),
    "test_p1": ("image", _opt_float),
    "radii": ("image", _floats),
    "train_images": ("image", int),
    "noise_reps": ("image", int),
    "rule": ("threshold", str),
    "alphas": ("threshold", _floats),
    "gamma": ("threshold", _opt_float),
    "n_list": ("runs", _ints),
    "mc_runs": ("runs", int),
    "char_size": ("runs", int),
    "train_size": ("runs", int),
    "probe_size": ("runs", int),
    "lr": ("train", _opt_float),
    "epochs": ("train", _opt_int),
    "batch_size": ("train", int),
    "init_half_width": ("train", float),
    "tilt": ("tilt", _bool),
    "n_mh": ("tilt", int),
    "kept": ("tilt", int),
    "burn_in": ("tilt", _opt_int),
    "thin": ("tilt", int),
    "tilt_gammas": ("tilt", _floats),
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "iid"
    statistic: str = "llr"
    seed: int = 0
    out_dir: str = "out"
    overlap: bool = False
    family: str = "laplace"
    theta0: float = 0.0
    theta1: float = 2.0
    thetas: tuple = (0.25, 0.35)
    prior: tuple = ()
    theta_true: tuple = ()
    scale: float = 1.0
    width: int = 64
    height: int = 64
    p0: float = 0.1
    p1: float = 0.9
    test_p0: Optional[float] = None
    test_p1: Optional[float] = None
    radii: tuple = (2.6, 3.7, 5.0, 6.5, 8.0, 9.5, 11.3)
    train_images: int = 5000
    noise_reps: int = 5
    rule: str = "clt"
    alphas: tuple = (0.25,)
    gamma: Optional[float] = None
    n_list: tuple = (5, 10, 20, 50, 100, 200, 500, 1000)
    mc_runs: int = 100_000
    char_size: int = 100_000
    train_size: int = 1000
    probe_size: int = 10_000
    lr: Optional[float] = None
    epochs: Optional[int] = None
    batch_size: int = 32
    init_half_width: float = 0.1
    tilt: bool = False
    n_mh: int = 10_000
    kept: int = 10_000
    burn_in: Optional[int] = None
    thin: int = 10
    tilt_gammas: tuple = ()

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.statistic not in STATISTICS:
            raise ValueError(f"statistic must be one of {STATISTICS}")
        if self.rule not in ("clt", "fixed"):
            raise ValueError("rule must be 'clt' or 'fixed'")
        if self.rule == "fixed" and self.gamma is None:
            raise ValueError("a fixed rule needs gamma")
        if self.rule == "clt" and (not self.alphas or any(not 0 < a < 1 for a in self.alphas)):
            raise ValueError("alphas must lie in (0, 1)")
        if self.mc_runs < 1 or self.char_size < 2 or self.train_size < 1:
            raise ValueError("runs must be positive and the characterization set at least 2")
        if not self.n_list or any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ValueError("n_list must be non-empty and increasing")
        if self.n_list[0] < 1:
            raise ValueError("n must be at least 1")
        if self.scenario == "image" and not self.radii:
            raise ValueError("image scenario needs a radius grid")

    @property
    def train_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 0.01 if self.scenario == "image" else 0.05

    @property
    def train_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 10 if self.scenario == "image" else 200

    @property
    def h1_thetas(self) -> tuple:
        """True alternatives used for H1 draws in the composite scenario."""
        return self.theta_true or self.thetas

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for f in fields(self):
            section, _ = SCHEMA[f.name]
            if not cp.has_section(section):
                cp.add_section(section)
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            cp.set(section, f.name, "none" if v is None else str(v))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    known_sections = {s for s, _ in SCHEMA.values()}
    values = {}
    for section in cp.sections():
        if section not in known_sections:
            raise ValueError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA or SCHEMA[key][0] != section:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            values[key] = SCHEMA[key][1](raw)
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def preset_names() -> list:
    root = resources.files("ldperf") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def load_preset(name: str) -> ExperimentConfig:
    path = resources.files("ldperf") / "presets" / f"{name}.ini"
    if not path.is_file():
        raise ValueError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return parse_config(path.read_text())
