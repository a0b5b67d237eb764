"""Line-oriented study configuration files.

    [geometry] r=0.25 h=0.02 layers=4
    [axial] n3=64
    [coefficient] kind=piecewise values=1,4 breakpoints=0,0.5
    [sweep] eps=0.4,0.2,0.1,0.05 xi=0,0,1;1,0,0
    [solver] tol=1e-8 k=3

Key/value pairs may follow the section header on the same line or on the
lines below it. ``#`` starts a comment.
"""
from __future__ import annotations

import shlex
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from fibrehom.mesh import CoefficientProfile


class ConfigError(ValueError):
    pass


MODES = ("fixed-xi", "fixed-theta")

_KEYS = {
    "geometry": {"r", "h", "layers"},
    "axial": {"n3"},
    "coefficient": {"kind", "values", "breakpoints", "nu"},
    "sweep": {"eps", "xi", "theta", "mode", "f", "grid"},
    "solver": {"tol", "k", "seed", "workers", "trust", "precond"},
}


@dataclass(frozen=True)
class StudyConfig:
    r: float = 0.25
    h: float = 0.02
    layers: int = 4
    n3: int = 64
    profile: CoefficientProfile = field(
        default_factory=lambda: CoefficientProfile((1.0, 4.0), (0.0, 0.5)))
    eps: tuple = (0.4, 0.2, 0.1, 0.05)
    mode: str = "fixed-xi"
    samples: tuple = ((0.0, 0.0, 1.0),)
    k: int = 3
    ftags: tuple = ("axial",)
    tol: float = 1e-8
    seed: int = 0
    workers: int = 1
    trust: bool = True
    precond: str = "kron"
    grid: int = 5

    def __post_init__(self):
        if not 0.0 < self.r < 0.5:
            raise ConfigError(f"r={self.r} must lie in (0, 1/2)")
        if not 0.0 < self.h <= self.r / 2:
            raise ConfigError(f"h={self.h} must lie in (0, r/2]")
        if self.layers < 0 or self.n3 < 2:
            raise ConfigError("need layers >= 0 and n3 >= 2")
        eps = np.asarray(self.eps, dtype=float)
        if eps.size == 0 or np.any(eps <= 0) or np.any(eps >= 1):
            raise ConfigError("eps values must lie in (0, 1)")
        if np.any(np.diff(eps) >= 0):
            raise ConfigError("eps values must be strictly decreasing")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        for s in self.samples:
            if len(s) != 3:
                raise ConfigError(f"sample {s} is not a 3-vector")
            thetas = [np.asarray(s) * e for e in eps] if self.mode == "fixed-xi" else [np.asarray(s)]
            for t in thetas:
                if np.any(t < -np.pi) or np.any(t >= np.pi):
                    raise ConfigError(f"theta {tuple(t)} outside [-pi, pi)^3")

    def with_mesh(self, h: float) -> "StudyConfig":
        return replace(self, h=h)

    def thetas(self, sample) -> list:
        s = np.asarray(sample, dtype=float)
        if self.mode == "fixed-xi":
            return [e * s for e in self.eps]
        return [s for _ in self.eps]


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _vectors(text: str) -> tuple:
    return tuple(_floats(chunk) for chunk in text.split(";") if chunk.strip())


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config(text: str) -> StudyConfig:
    raw: dict[str, dict[str, str]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            end = line.find("]")
            if end < 0:
                raise ConfigError(f"line {lineno}: unterminated section header")
            section = line[1:end].strip()
            if section not in _KEYS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            raw.setdefault(section, {})
            line = line[end + 1:].strip()
        for tok in shlex.split(line):
            if section is None:
                raise ConfigError(f"line {lineno}: key outside any section")
            if "=" not in tok:
                raise ConfigError(f"line {lineno}: expected key=value, got {tok!r}")
            key, val = tok.split("=", 1)
            if key not in _KEYS[section]:
                raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
            raw[section][key] = val

    try:
        return StudyConfig(**_build_kwargs(raw))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_kwargs(raw: dict) -> dict:
    kw = {}
    g = raw.get("geometry", {})
    if "r" in g:
        kw["r"] = float(g["r"])
    if "h" in g:
        kw["h"] = float(g["h"])
    if "layers" in g:
        kw["layers"] = int(g["layers"])
    if "n3" in raw.get("axial", {}):
        kw["n3"] = int(raw["axial"]["n3"])
    c = raw.get("coefficient", {})
    if c:
        kind = c.get("kind", "piecewise")
        values = _floats(c.get("values", "1"))
        nu = float(c.get("nu", 0.1))
        if kind == "constant":
            if len(values) != 1:
                raise ConfigError("constant profile takes one value")
            kw["profile"] = CoefficientProfile.constant(values[0], nu)
        elif kind in ("piecewise", "piecewise-constant"):
            bps = _floats(c.get("breakpoints", "0"))
            kw["profile"] = CoefficientProfile(values, bps, nu)
        else:
            raise ConfigError(f"unknown coefficient kind {kind!r}")
    s = raw.get("sweep", {})
    if "eps" in s:
        kw["eps"] = _floats(s["eps"])
    if "mode" in s:
        kw["mode"] = s["mode"]
    if "xi" in s and "theta" in s:
        raise ConfigError("give either xi or theta samples, not both")
    if "xi" in s:
        kw["samples"] = _vectors(s["xi"])
        kw.setdefault("mode", "fixed-xi")
    if "theta" in s:
        kw["samples"] = _vectors(s["theta"])
        kw.setdefault("mode", "fixed-theta")
    if "f" in s:
        kw["ftags"] = tuple(t.strip() for t in s["f"].split(",") if t.strip())
    if "grid" in s:
        kw["grid"] = int(s["grid"])
    sv = raw.get("solver", {})
    for key, conv in (("tol", float), ("k", int), ("seed", int), ("workers", int),
                      ("trust", _bool), ("precond", str)):
        if key in sv:
            kw[key] = conv(sv[key])
    return kw


def load_config(path) -> StudyConfig:
    return parse_config(Path(path).read_text())
