"""Metrics and convergence curves.

The headline metric is the average MSE (1/T) * sum_t ||s(t) - y(t)||^2.
Because blind separation only identifies sources up to permutation and
sign, baselines are additionally scored after the best permutation/sign
alignment (exhaustive over m! * 2^m, so restricted to small m). Scale is
deliberately not compensated: the algorithms pin output scale through
their whitening terms.

Convergence curves are cumulative: the value at t is the mean squared
error averaged over the first t samples. For a causal recursion this
coincides with running independent experiments of total length t, since
the state at time t never depends on later samples.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError

_MAX_EXHAUSTIVE_M = 6


def squared_errors(y_seq: np.ndarray, s_seq: np.ndarray) -> np.ndarray:
    """Per-step squared error ||s(t) - y(t)||^2 as a length-T vector."""
    y_seq = np.asarray(y_seq, dtype=float)
    s_seq = np.asarray(s_seq, dtype=float)
    if y_seq.shape != s_seq.shape:
        raise DimensionError(f"shape mismatch: y {y_seq.shape} vs s {s_seq.shape}")
    return np.sum((s_seq - y_seq) ** 2, axis=0)


def average_mse(y_seq: np.ndarray, s_seq: np.ndarray) -> float:
    """(1/T) * sum_t ||s(t) - y(t)||^2."""
    errs = squared_errors(y_seq, s_seq)
    if errs.size == 0:
        return 0.0
    return float(errs.mean())


def cumulative_mse(sq_errors: np.ndarray) -> np.ndarray:
    """Running mean of per-step squared errors; entry t averages steps 1..t+1."""
    sq_errors = np.asarray(sq_errors, dtype=float)
    if sq_errors.size == 0:
        return sq_errors.copy()
    return np.cumsum(sq_errors) / np.arange(1, sq_errors.size + 1)


@dataclass(frozen=True)
class Alignment:
    """A signed permutation of output rows: row i of the aligned output is
    ``signs[i] * y[perm[i]]``."""

    perm: tuple[int, ...]
    signs: tuple[int, ...]

    def apply(self, y_seq: np.ndarray) -> np.ndarray:
        return np.asarray(self.signs, dtype=float)[:, None] * y_seq[list(self.perm), :]


def best_alignment(y_seq: np.ndarray, s_seq: np.ndarray) -> tuple[Alignment, float]:
    """Exhaustively minimize average MSE over row permutations and signs."""
    y_seq = np.asarray(y_seq, dtype=float)
    s_seq = np.asarray(s_seq, dtype=float)
    if y_seq.shape != s_seq.shape:
        raise DimensionError(f"shape mismatch: y {y_seq.shape} vs s {s_seq.shape}")
    m = y_seq.shape[0]
    if m > _MAX_EXHAUSTIVE_M:
        raise DimensionError(f"exhaustive alignment limited to m <= {_MAX_EXHAUSTIVE_M}, got m={m}")
    best: tuple[Alignment, float] | None = None
    for perm in itertools.permutations(range(m)):
        for signs in itertools.product((1, -1), repeat=m):
            cand = Alignment(perm, signs)
            mse = average_mse(cand.apply(y_seq), s_seq)
            if best is None or mse < best[1]:
                best = (cand, mse)
    assert best is not None
    return best


@dataclass
class RunRecord:
    """Outputs of one separation run over a single instance.

    ``sq_errors`` holds the per-step squared error against the instance's
    sources when they are known; ``final_state`` keeps the terminal
    separator for oracle checks and is never serialized.
    """

    y_seq: np.ndarray
    sq_errors: np.ndarray | None = None
    algorithm: str = ""
    config_digest: str = ""
    final_state: object = None

    @property
    def T(self) -> int:
        return self.y_seq.shape[1]

    def cumulative(self) -> np.ndarray:
        if self.sq_errors is None:
            raise DimensionError("record has no per-step errors")
        return cumulative_mse(self.sq_errors)

    def to_csv(self, path: str | Path) -> None:
        """Columns: t, y_1..y_m, sq_error, cum_avg_mse (error columns when known)."""
        m, T = self.y_seq.shape
        cols = [np.arange(1, T + 1, dtype=float)] + [self.y_seq[i] for i in range(m)]
        header = ["t"] + [f"y_{i + 1}" for i in range(m)]
        if self.sq_errors is not None:
            cols += [np.asarray(self.sq_errors, dtype=float), self.cumulative()]
            header += ["sq_error", "cum_avg_mse"]
        meta = f"algorithm={self.algorithm} config_digest={self.config_digest}"
        np.savetxt(
            path,
            np.column_stack(cols) if T else np.empty((0, len(header))),
            fmt="%.17g",
            delimiter=",",
            header=meta + "\n" + ",".join(header),
        )


def aligned_record(record: RunRecord, s_seq: np.ndarray, suffix: str = "_aligned") -> RunRecord:
    """Copy of ``record`` scored after the best permutation/sign alignment."""
    alignment, _ = best_alignment(record.y_seq, s_seq)
    y_al = alignment.apply(record.y_seq)
    return RunRecord(
        y_seq=y_al,
        sq_errors=squared_errors(y_al, s_seq),
        algorithm=record.algorithm + suffix,
        config_digest=record.config_digest,
        final_state=record.final_state,
    )


@dataclass
class CurveTable:
    """Cumulative-MSE curves, one column per algorithm, shared t axis."""

    t: np.ndarray
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> None:
        names = ["t"] + list(self.columns)
        data = np.column_stack([self.t] + [self.columns[k] for k in self.columns])
        np.savetxt(path, data, fmt="%.17g", delimiter=",",
                   header=",".join(names), comments="")

    @classmethod
    def from_csv(cls, path: str | Path) -> "CurveTable":
        with open(path) as fh:
            names = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if names[0] != "t":
            raise DimensionError(f"curve CSV must start with a t column, got {names[0]!r}")
        return cls(t=data[:, 0], columns={n: data[:, i + 1] for i, n in enumerate(names[1:])})


def convergence_curve(records: Sequence[RunRecord], s_seq: np.ndarray | None = None) -> CurveTable:
    """Average cumulative-MSE curves grouped by ``record.algorithm``.

    With ``s_seq`` given, per-step errors are recomputed against it
    (single-instance view); otherwise each record must already carry its
    own errors, and records sharing an algorithm id are averaged.
    """
    if not records:
        raise DimensionError("no records given")
    lengths = {r.T for r in records}
    if len(lengths) != 1:
        raise DimensionError(f"records have mismatched lengths: {sorted(lengths)}")
    T = lengths.pop()
    groups: dict[str, list[np.ndarray]] = {}
    for rec in records:
        errs = squared_errors(rec.y_seq, s_seq) if s_seq is not None else rec.sq_errors
        if errs is None:
            raise DimensionError(f"record {rec.algorithm!r} has no errors and no s_seq given")
        groups.setdefault(rec.algorithm or "run", []).append(cumulative_mse(errs))
    return CurveTable(
        t=np.arange(1, T + 1, dtype=float),
        columns={name: np.mean(curves, axis=0) for name, curves in groups.items()},
    )


def merge_curves(tables: Sequence[CurveTable]) -> CurveTable:
    """Join curve tables on a common t axis; duplicate names get suffixed."""
    if not tables:
        raise DimensionError("no curve tables given")
    lengths = [t.t.size for t in tables]
    if len(set(lengths)) != 1:
        raise DimensionError(f"curve tables have mismatched lengths: {lengths}")
    merged = CurveTable(t=tables[0].t.copy())
    for table in tables:
        for name, col in table.columns.items():
            key, k = name, 2
            while key in merged.columns:  # deterministic suffixing of duplicates
                key = f"{name}_{k}"
                k += 1
            merged.columns[key] = col.copy()
    return merged
