"""Experiment configuration: flat ``key = value`` text with ``[section]`` headers.

Every key of the schema below must be present in a user-supplied file;
the built-in :data:`DEFAULT_CONFIG` is used when no file is given.
Unknown keys are rejected so typos do not pass silently.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError

__all__ = ["ExperimentConfig", "DEFAULT_CONFIG", "load_config", "parse_config"]

DEFAULT_CONFIG = """\
[chart]
spec = eta-plus-quadratic p=1 q=1 scale=0.2 seed=0 width=0.5
base = 0.1, 0.1
R = 0.2

[domain]
center = 0, 0
r = 1.0
h = 0.015625

[data]
family = modes
amplitude = 0.05
sigma = 0.01

[removability]
eps = 0.2, 0.1, 0.05
K_inner = 0.4
K_outer = 0.95
mp_alpha = auto

[holder]
alpha = 0.5

[solver]
tol = 1e-10
max_iter = 100

[capacity]
eps = 0.2, 0.1, 0.05, 0.025
r = 1.0
M = 1.0
m = 2
h = 0.0078125
K_inner = 0.4
K_outer = 0.95

[decay]
a0 = 0.25
steps = 40

[run]
seed = 0
workers = 1
"""


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _auto_float(text: str) -> Optional[float]:
    return None if text.strip().lower() == "auto" else float(text)


# (section, key) -> (attribute, converter)
_SCHEMA = {
    ("chart", "spec"): ("chart", str),
    ("chart", "base"): ("base", _floats),
    ("chart", "R"): ("R", float),
    ("domain", "center"): ("center", _floats),
    ("domain", "r"): ("r", float),
    ("domain", "h"): ("h", float),
    ("data", "family"): ("family", str),
    ("data", "amplitude"): ("amplitude", float),
    ("data", "sigma"): ("sigma", float),
    ("removability", "eps"): ("eps", _floats),
    ("removability", "K_inner"): ("K_inner", float),
    ("removability", "K_outer"): ("K_outer", float),
    ("removability", "mp_alpha"): ("mp_alpha", _auto_float),
    ("holder", "alpha"): ("alpha", float),
    ("solver", "tol"): ("tol", float),
    ("solver", "max_iter"): ("max_iter", int),
    ("capacity", "eps"): ("cap_eps", _floats),
    ("capacity", "r"): ("cap_r", float),
    ("capacity", "M"): ("cap_M", float),
    ("capacity", "m"): ("cap_m", int),
    ("capacity", "h"): ("cap_h", float),
    ("capacity", "K_inner"): ("cap_K_inner", float),
    ("capacity", "K_outer"): ("cap_K_outer", float),
    ("decay", "a0"): ("a0", float),
    ("decay", "steps"): ("steps", int),
    ("run", "seed"): ("seed", int),
    ("run", "workers"): ("workers", int),
}


@dataclass(frozen=True)
class ExperimentConfig:
    chart: str
    base: tuple
    R: float
    center: tuple
    r: float
    h: float
    family: str
    amplitude: float
    sigma: float
    eps: tuple
    K_inner: float
    K_outer: float
    mp_alpha: Optional[float]
    alpha: float
    tol: float
    max_iter: int
    cap_eps: tuple
    cap_r: float
    cap_M: float
    cap_m: int
    cap_h: float
    cap_K_inner: float
    cap_K_outer: float
    a0: float
    steps: int
    seed: int
    workers: int = 1
    out: Optional[str] = field(default=None, compare=False)

    def validate(self) -> "ExperimentConfig":
        def bad(msg):
            raise ConfigError(msg)

        if not (self.h > 0 and self.cap_h > 0):
            bad("grid spacings must be positive")
        if len(self.center) != 2 and len(self.center) != 3:
            bad("domain center must have 2 or 3 coordinates")
        for name, eps, r in (("removability", self.eps, self.r), ("capacity", self.cap_eps, self.cap_r)):
            if not eps:
                bad(f"[{name}] eps list is empty")
            if any(not 0 < e < r for e in eps):
                bad(f"[{name}] radii must satisfy 0 < eps < r")
        if not (self.r > 0 and self.R > 0):
            bad("radii must be positive")
        if not self.K_inner < self.K_outer <= self.r:
            bad("[removability] needs K_inner < K_outer <= r")
        if not 0 < self.alpha < 1:
            bad("[holder] alpha must lie in (0, 1)")
        if self.cap_m not in (2, 3):
            bad("[capacity] m must be 2 or 3")
        if self.workers < 1:
            bad("[run] workers must be >= 1")
        return self

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw).validate() if kw else self


def _line_of(text: str, section: str, key: str) -> Optional[int]:
    sec = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            sec = m.group(1).strip()
        elif sec == section and "=" in s and s.split("=", 1)[0].strip() == key:
            return no
    return None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate configuration text."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (R vs r)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    known = {(s, k) for s, k in _SCHEMA}
    for sec in cp.sections():
        for key in cp[sec]:
            if (sec, key) not in known:
                raise ConfigError(f"{source}:{_line_of(text, sec, key)}: unknown key "
                                  f"{key!r} in [{sec}]")
    values = {}
    for (sec, key), (attr, conv) in _SCHEMA.items():
        if not cp.has_section(sec) or key not in cp[sec]:
            raise ConfigError(f"{source}: missing key {key!r} in section [{sec}]")
        raw = cp[sec][key]
        try:
            values[attr] = conv(raw)
        except ValueError:
            raise ConfigError(f"{source}:{_line_of(text, sec, key)}: bad value {raw!r} "
                              f"for key {key!r} in [{sec}]") from None
    return ExperimentConfig(**values).validate()


def load_config(path=None) -> ExperimentConfig:
    """Read ``path`` or fall back to :data:`DEFAULT_CONFIG`."""
    if path is None:
        return parse_config(DEFAULT_CONFIG, "<default>")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
    return parse_config(text, str(p))
