"""Run configuration: a flat ``key=value`` file merged with command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass(frozen=True)
class RunConfig:
    seed: int = 1993
    # world
    T: int = 10
    classes_per_task: int = 5
    n_concepts: int = 2
    d_in: int = 32
    samples_per_class: int = 100
    # model
    d: int = 32
    r: int = 16
    lam: float = 1.0
    epochs: int = 60
    lr: float = 0.2
    cosine_decay: bool = True
    m_pseudo: int = 256
    # forest and inference
    tau: float = 1.0
    tau_e: float = 0.0
    k_policy: str = "auto"
    strategy: str = "balanced"

    def __post_init__(self):
        for name in ("T", "classes_per_task", "n_concepts", "d_in", "samples_per_class", "d", "r", "epochs", "m_pseudo"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.tau_e < 0:
            raise ValueError("tau_e must be >= 0")
        if self.lam < 0 or self.lr <= 0:
            raise ValueError("lam must be >= 0 and lr > 0")
        if self.strategy not in ("balanced", "unlimited_depth"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        parse_k_policy(self.k_policy)
        if (self.T * self.classes_per_task) % self.n_concepts:
            raise ValueError("T * classes_per_task must be divisible by n_concepts")

    @property
    def classes_per_concept(self) -> int:
        return self.T * self.classes_per_task // self.n_concepts

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def parse_k_policy(value):
    """``auto`` | ``flat`` | ``fixed:K`` | ``K`` -> ``"auto"``, ``"flat"`` or an int."""
    value = str(value).strip()
    if value in ("auto", "flat"):
        return value
    if value.startswith("fixed:"):
        value = value[len("fixed:"):]
    try:
        k = int(value)
    except ValueError:
        raise ValueError(f"bad k policy {value!r}") from None
    if k < 1:
        raise ValueError("K must be >= 1")
    return k


_ALIASES = {"lambda": "lam", "tau-e": "tau_e", "k": "k_policy", "K": "k_policy"}


def _coerce(field_type, raw: str):
    if field_type in (bool, "bool"):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if field_type in (int, "int"):
        return int(raw)
    if field_type in (float, "float"):
        return float(raw)
    return raw.strip()


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Read a ``key=value`` file (``#`` comments allowed); keyword overrides win."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            key = _ALIASES.get(key, key).replace("-", "_")
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(types[key], raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)
