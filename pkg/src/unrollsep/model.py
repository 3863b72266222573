"""Linear mixture model and synthetic data generation.

Observations follow x(t) = A s(t) + n(t): m independent sources are mixed
by a static l x m matrix A (l >= m) and observed under additive white
Gaussian noise. Columns index time throughout, so column t of ``X`` is the
observation vector x(t).

Randomness comes from numpy's PCG64 generator seeded through
``np.random.default_rng(seed)``; draw order is fixed (sources, then mixing
matrix, then noise), which makes every instance bit-reproducible from its
seed on any platform with IEEE-754 doubles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, DegenerateSignalError, DimensionError

SOURCE_DISTS = ("uniform_zero_mean", "uniform01", "uniform_unit", "custom")

# Half-widths of the centered uniform variants.
_UNIT_HALF_WIDTH = float(np.sqrt(3.0))  # variance 1


@dataclass(frozen=True)
class MixtureInstance:
    """One synthetic mixture: sources, mixing matrix, noise level, observations.

    Instances are immutable after construction and safe to share between
    workers. ``X`` always equals ``A @ S`` plus the (possibly zero) noise
    realization drawn at generation time.
    """

    m: int
    l: int
    T: int
    S: np.ndarray
    A: np.ndarray
    noise_var: float
    X: np.ndarray
    seed: int | None = None
    source_dist: str = "uniform_zero_mean"

    def __post_init__(self):
        if self.m > self.l:
            raise DimensionError(f"need l >= m, got m={self.m}, l={self.l}")
        if self.T < 0:
            raise DimensionError(f"negative sequence length T={self.T}")
        if self.noise_var < 0:
            raise ConfigError(f"noise_var must be >= 0, got {self.noise_var}")
        for name, arr, shape in (
            ("S", self.S, (self.m, self.T)),
            ("A", self.A, (self.l, self.m)),
            ("X", self.X, (self.l, self.T)),
        ):
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")


@dataclass(frozen=True)
class GeneratorConfig:
    """Settings for :func:`generate`. The seed fully determines the instance."""

    m: int = 3
    l: int = 3
    T: int = 300
    source_dist: str = "uniform_zero_mean"
    noise_var: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.source_dist not in SOURCE_DISTS:
            raise ConfigError(
                f"unknown source_dist {self.source_dist!r}, choose from {SOURCE_DISTS}"
            )
        if self.noise_var < 0:
            raise ConfigError(f"noise_var must be >= 0, got {self.noise_var}")


def _draw_sources(rng: np.random.Generator, dist: str, m: int, T: int,
                  sampler: Callable | None) -> np.ndarray:
    if dist == "uniform_zero_mean":
        return rng.uniform(-0.5, 0.5, size=(m, T))
    if dist == "uniform01":
        return rng.uniform(0.0, 1.0, size=(m, T))
    if dist == "uniform_unit":
        return rng.uniform(-_UNIT_HALF_WIDTH, _UNIT_HALF_WIDTH, size=(m, T))
    if sampler is None:
        raise ConfigError("source_dist 'custom' requires a sampler callable")
    S = np.asarray(sampler(rng, m, T), dtype=float)
    if S.shape != (m, T):
        raise DimensionError(f"custom sampler returned shape {S.shape}, expected {(m, T)}")
    return S


def generate(cfg: GeneratorConfig, sampler: Callable | None = None) -> MixtureInstance:
    """Draw one mixture instance from ``cfg``.

    Sources are i.i.d. from the configured distribution (default: uniform on
    [-0.5, 0.5], zero mean), the mixing matrix has i.i.d. standard normal
    entries, and noise columns are i.i.d. N(0, noise_var * I). With
    ``noise_var == 0`` the observations equal ``A @ S`` exactly.
    """
    if cfg.m > cfg.l:
        raise DimensionError(f"need l >= m, got m={cfg.m}, l={cfg.l}")
    if cfg.T < 1:
        raise DimensionError(f"need T >= 1, got T={cfg.T}")
    rng = np.random.default_rng(cfg.seed)
    S = _draw_sources(rng, cfg.source_dist, cfg.m, cfg.T, sampler)
    A = rng.standard_normal((cfg.l, cfg.m))
    N = rng.standard_normal((cfg.l, cfg.T)) * np.sqrt(cfg.noise_var)
    X = A @ S + N
    return MixtureInstance(
        m=cfg.m, l=cfg.l, T=cfg.T, S=S, A=A, noise_var=cfg.noise_var, X=X,
        seed=cfg.seed, source_dist=cfg.source_dist,
    )


def empirical_kurtosis(signal: np.ndarray) -> float:
    """Sample excess kurtosis E[(s-mu)^4]/sigma^4 - 3 of a 1-D signal.

    Raises :class:`DegenerateSignalError` on (numerically) constant input,
    where the statistic is undefined.
    """
    s = np.asarray(signal, dtype=float).ravel()
    if s.size < 4:
        raise DimensionError(f"need at least 4 samples, got {s.size}")
    centered = s - s.mean()
    m2 = np.mean(centered**2)
    # below ~1e-24 * mean square the centered values are rounding noise
    if m2 <= 1e-24 * np.mean(s * s) + 1e-300:
        raise DegenerateSignalError("signal variance is (numerically) zero")
    return float(np.mean(centered**4) / m2**2 - 3.0)


# ---------------------------------------------------------------------------
# Disk layout: one directory per instance with S.csv / A.csv / X.csv and a
# meta.json carrying the scalar fields. CSVs are comma-separated, row-major,
# printed with 17 significant digits so doubles round-trip exactly.
# ---------------------------------------------------------------------------

_CSV_FMT = "%.17g"


def save_instance(instance: MixtureInstance, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "S.csv", instance.S, fmt=_CSV_FMT, delimiter=",")
    np.savetxt(directory / "A.csv", instance.A, fmt=_CSV_FMT, delimiter=",")
    np.savetxt(directory / "X.csv", instance.X, fmt=_CSV_FMT, delimiter=",")
    meta = {
        "m": instance.m,
        "l": instance.l,
        "T": instance.T,
        "noise_var": instance.noise_var,
        "seed": instance.seed,
        "source_dist": instance.source_dist,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_instance(directory: str | Path) -> MixtureInstance:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    m, l, T = meta["m"], meta["l"], meta["T"]

    def read(name, rows, cols):
        arr = np.loadtxt(directory / name, delimiter=",", ndmin=2)
        return arr.reshape(rows, cols)

    return MixtureInstance(
        m=m, l=l, T=T,
        S=read("S.csv", m, T),
        A=read("A.csv", l, m),
        noise_var=meta["noise_var"],
        X=read("X.csv", l, T),
        seed=meta.get("seed"),
        source_dist=meta.get("source_dist", "uniform_zero_mean"),
    )
