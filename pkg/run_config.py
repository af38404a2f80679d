#!/usr/bin/env python3
"""
Validated configuration for the run and bench commands.

Values come from command-line flags with defaults from the environment
(loaded from ``.env`` by the CLI):

    IVLA_SEED           default seed for generated inputs and updates (42)
    IVLA_LOG_LEVEL      root log level (INFO)
    IVLA_BENCH_WORKERS  bench worker threads (1)
    IVLA_VERIFY_MAX_N   largest n verified by default in run (256)
"""

import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Type, TypeVar

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from errors import ConfigError
from iterative_analytics import BUILTIN_WORKLOADS, IterativeModel, Strategy

logger = logging.getLogger(__name__)

ITERATIVE_WORKLOADS = ("powers", "sums", "general")


def default_seed() -> int:
    return int(os.getenv("IVLA_SEED", "42"))


def default_workers() -> int:
    return int(os.getenv("IVLA_BENCH_WORKERS", "1"))


def verify_max_n() -> int:
    return int(os.getenv("IVLA_VERIFY_MAX_N", "256"))


def log_level() -> str:
    return os.getenv("IVLA_LOG_LEVEL", "INFO").upper()


# ===== FLAG PARSING =====

def parse_bindings(text: Optional[str]) -> Dict[str, str]:
    """``"n=64,p=4"`` -> ``{"n": "64", "p": "4"}``"""
    bindings: Dict[str, str] = {}
    if not text:
        return bindings
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, sep, value = item.partition("=")
        if not sep or not name.strip() or not value.strip():
            raise ConfigError(f"expected name=value, got '{item}'")
        bindings[name.strip()] = value.strip()
    return bindings


def parse_dims(text: Optional[str]) -> Dict[str, int]:
    dims = {}
    for name, value in parse_bindings(text).items():
        try:
            dims[name] = int(value)
        except ValueError:
            raise ConfigError(f"dimension {name} must be an integer, got '{value}'")
    return dims


def parse_list(text: Optional[str], kind=str) -> List:
    if not text:
        return []
    try:
        return [kind(item.strip()) for item in text.split(",") if item.strip()]
    except ValueError:
        raise ConfigError(f"cannot read '{text}' as a list of {kind.__name__} values")


M = TypeVar("M", bound=BaseModel)


def validated(model: Type[M], /, **data) -> M:
    """Build a pydantic model, turning validation failures into ConfigError"""
    try:
        return model(**data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or model.__name__}: {err['msg']}"
            for err in e.errors()
        )
        raise ConfigError(f"invalid {model.__name__}: {problems}")


# ===== MODELS =====

class GenSpec(BaseModel):
    """Generated update stream; with ``zipf`` set, ``rank`` is the batch size"""

    count: int = Field(10, ge=0)
    rank: int = Field(1, ge=1)
    zipf: Optional[float] = Field(None, ge=0)
    seed: int = Field(default_factory=default_seed)
    scale: float = Field(0.01, gt=0)

    @classmethod
    def parse(cls, text: Optional[str]) -> "GenSpec":
        raw = parse_bindings(text)
        unknown = set(raw) - {"count", "rank", "zipf", "seed", "scale"}
        if unknown:
            raise ConfigError(f"unknown --gen keys {sorted(unknown)}")
        return validated(cls, **raw)


def _check_model(workload: str, model: Optional[str], strategy: str, k: int, s: Optional[int]) -> None:
    parsed = Strategy.parse(strategy)
    if workload in ITERATIVE_WORKLOADS:
        IterativeModel.parse(model or "lin", s).validate(k)
        if parsed is Strategy.HYBRID and workload != "general":
            raise ConfigError("the hybrid strategy is valid only for the general workload")
    elif parsed is Strategy.HYBRID:
        raise ConfigError(f"the hybrid strategy is valid only for the general workload, not {workload}")


class RunConfig(BaseModel):
    """One ``run``: a builtin workload or a program file plus an update stream"""

    workload: str
    program_path: Optional[Path] = None
    dynamic: Optional[str] = None
    dims: Dict[str, int] = Field(default_factory=dict)
    k: int = Field(1, ge=1)
    s: Optional[int] = Field(None, ge=1)
    model: Optional[str] = None
    strategy: str = "incr"
    stream: Optional[Path] = None
    gen: GenSpec = Field(default_factory=GenSpec)
    verify: Optional[bool] = None
    tolerance: float = Field(1e-6, gt=0)
    out: Optional[Path] = None
    save_final: Optional[Path] = None
    inputs: Dict[str, Path] = Field(default_factory=dict)
    seed: int = Field(default_factory=default_seed)

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, dims: Dict[str, int]) -> Dict[str, int]:
        bad = {name: value for name, value in dims.items() if value < 1}
        if bad:
            raise ValueError(f"dimensions must be positive, got {bad}")
        return dims

    @model_validator(mode="after")
    def _compatible(self) -> "RunConfig":
        if self.program_path is None and self.workload not in BUILTIN_WORKLOADS:
            raise ValueError(f"unknown workload '{self.workload}'; expected a .ivla path or one of {BUILTIN_WORKLOADS}")
        if self.program_path is None and "n" not in self.dims:
            raise ValueError(f"the {self.workload} workload needs --dims n=...")
        try:
            _check_model(self.workload, self.model, self.strategy, self.k, self.s)
        except ConfigError as e:
            raise ValueError(e.message)
        return self

    @property
    def iterative_model(self) -> Optional[IterativeModel]:
        if self.workload not in ITERATIVE_WORKLOADS:
            return None
        return IterativeModel.parse(self.model or "lin", self.s)

    def should_verify(self) -> bool:
        if self.verify is not None:
            return self.verify
        return max(self.dims.values(), default=0) <= verify_max_n()


class BenchConfig(BaseModel):
    """Cross product of sizes x models x strategies, each cell run ``runs`` times"""

    workload: str
    sizes: List[int] = Field(min_length=1)
    models: List[str] = Field(default_factory=lambda: ["lin"])
    strategies: List[str] = Field(default_factory=lambda: ["reeval", "incr"])
    k: int = Field(16, ge=1)
    s: Optional[int] = Field(None, ge=1)
    p: int = Field(1, ge=1)
    m: Optional[int] = Field(None, ge=1)
    runs: int = Field(3, ge=1)
    updates: int = Field(10, ge=1)
    rank: int = Field(1, ge=1)
    seed: int = Field(default_factory=default_seed)
    workers: int = Field(default_factory=default_workers, ge=1)
    zipf_factors: List[float] = Field(default_factory=list)
    batch: int = Field(64, ge=1)
    verify: bool = False
    out: Optional[Path] = None
    report: Optional[Path] = None

    @field_validator("sizes")
    @classmethod
    def _positive_sizes(cls, sizes: List[int]) -> List[int]:
        if any(n < 1 for n in sizes):
            raise ValueError(f"sizes must be positive, got {sizes}")
        return sizes

    @field_validator("zipf_factors")
    @classmethod
    def _non_negative(cls, factors: List[float]) -> List[float]:
        if any(z < 0 for z in factors):
            raise ValueError(f"zipf factors must be non-negative, got {factors}")
        return factors

    @model_validator(mode="after")
    def _known_workload(self) -> "BenchConfig":
        if self.workload not in BUILTIN_WORKLOADS:
            raise ValueError(f"unknown workload '{self.workload}'; expected one of {BUILTIN_WORKLOADS}")
        for name in self.strategies:
            try:
                Strategy.parse(name)
            except ConfigError as e:
                raise ValueError(e.message)
        return self
