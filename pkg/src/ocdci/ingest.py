"""CSV ingestion, training-window standardization and multi-changepoint monitoring."""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field

import numpy as np

from .detector import DetectorConfig, new_state
from .inference import InferenceConfig, InferenceResult, StreamExhausted, _Rows, run_ocd_ci

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreprocessSpec:
    """How raw series are turned into roughly standard-normal noise.

    The mean and sd of each series are learned on the first ``train_rows``
    rows only; ``sqrt_transform`` is applied before and ``clip`` after
    standardization.
    """

    train_rows: int
    sqrt_transform: bool = False
    clip: float | None = None

    def __post_init__(self) -> None:
        if int(self.train_rows) != self.train_rows or self.train_rows < 2:
            raise ValueError(f"train_rows must be an integer >= 2, got {self.train_rows!r}")
        if self.clip is not None and not self.clip > 0:
            raise ValueError(f"clip must be positive, got {self.clip!r}")


def read_csv_rows(fh) -> tuple[list[str], Iterator[np.ndarray]]:
    """Header names plus a lazy iterator of numeric rows (1-based data row numbers in errors)."""
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty CSV input: expected a header row") from None
    names = [h.strip() for h in header]
    width = len(names)

    def rows():
        for lineno, raw in enumerate(reader, start=1):
            if not raw:
                continue
            if len(raw) != width:
                raise ValueError(f"data row {lineno}: expected {width} cells, got {len(raw)}")
            try:
                yield np.array([float(c) for c in raw])
            except ValueError:
                bad = next(c for c in raw if not _is_number(c))
                raise ValueError(f"data row {lineno}: non-numeric cell {bad!r}") from None

    return names, rows()


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


@dataclass
class Standardizer:
    keep: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    spec: PreprocessSpec

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = _transform(np.atleast_2d(X), self.spec)[:, self.keep]
        Z = (X - self.mean) / self.sd
        if self.spec.clip is not None:
            np.clip(Z, -self.spec.clip, self.spec.clip, out=Z)
        return Z


def _transform(X: np.ndarray, spec: PreprocessSpec) -> np.ndarray:
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite value in input")
    if spec.sqrt_transform:
        if np.any(X < 0):
            raise ValueError("negative value cannot be square-root transformed")
        return np.sqrt(X)
    return X


def fit_standardizer(train: np.ndarray, spec: PreprocessSpec, names: list[str] | None = None) -> Standardizer:
    """Learn per-series mean and sd on ``train``; constant series are dropped with a warning."""
    T = _transform(np.asarray(train, dtype=float), spec)
    mean = T.mean(axis=0)
    sd = T.std(axis=0, ddof=1)
    keep = sd > 0
    for j in np.flatnonzero(~keep):
        label = names[j] if names else str(j)
        log.warning("dropping series %r: constant over the training window", label)
    if not keep.any():
        raise ValueError("every series is constant over the training window")
    return Standardizer(np.flatnonzero(keep), mean[keep], sd[keep], spec)


def preprocess(
    rows: Iterable, spec: PreprocessSpec, names: list[str] | None = None, block: int = 1024
) -> tuple[Standardizer, Iterator[np.ndarray]]:
    """Fit on the first ``train_rows`` rows, then stream standardized blocks of every row.

    Training rows are emitted too, so callers may start monitoring anywhere.
    """
    it = iter(rows)
    train = []
    for row in it:
        train.append(np.asarray(row, dtype=float))
        if len(train) == spec.train_rows:
            break
    if len(train) < spec.train_rows:
        raise ValueError(f"need {spec.train_rows} training rows, data has only {len(train)}")
    train = np.vstack(train)
    fitted = fit_standardizer(train, spec, names)

    def blocks():
        yield fitted(train)
        buf = []
        for row in it:
            buf.append(row)
            if len(buf) == block:
                yield fitted(np.vstack(buf))
                buf = []
        if buf:
            yield fitted(np.vstack(buf))

    return fitted, blocks()


@dataclass(frozen=True)
class MonitorRecord:
    """One declaration with every time index shifted to the monitored source's numbering."""

    offset: int
    result: InferenceResult

    @property
    def N(self) -> int:
        return self.offset + self.result.anchor.N

    @property
    def ci(self) -> tuple[int, int]:
        return self.offset + self.result.ci_left, self.offset + self.result.ci_right

    def to_record(self, names: list[str] | None = None) -> dict:
        res = self.result
        label = (lambda j: names[j]) if names else (lambda j: j)
        rec = res.to_record()
        rec.update(
            N=self.N,
            ci_left=self.ci[0],
            ci_right=self.ci[1],
            anchor=label(res.anchor.anchor_j),
            support=[label(j) for j in res.support],
            shrunken_scales={str(label(int(j))): b for j, b in rec["shrunken_scales"].items()},
            segment_start=self.offset,
        )
        return rec


@dataclass
class MonitorSession:
    det_config: DetectorConfig
    inf_config: InferenceConfig
    cooldown: int = 0
    records: list[MonitorRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if int(self.cooldown) != self.cooldown or self.cooldown < 0:
            raise ValueError(f"cooldown must be a non-negative integer, got {self.cooldown!r}")


def monitor(stream: Iterable, session: MonitorSession, offset: int = 0) -> list[MonitorRecord]:
    """Detect repeatedly: after each declaration use the extras, skip ``cooldown`` rows, restart.

    ``offset`` is the number of source rows preceding ``stream``; a record's
    times count from the start of the source.
    """
    rows = _Rows(stream, session.det_config.p)
    while True:
        state = new_state(session.det_config)
        try:
            res = run_ocd_ci(rows, session.det_config, session.inf_config, state)
        except StreamExhausted:
            log.warning(
                "stream ended after a declaration at row %d before %d extra rows were available",
                offset + state.n,
                session.inf_config.ell,
            )
            break
        if res is None:
            break
        session.records.append(MonitorRecord(offset, res))
        offset += res.anchor.N + res.extras_used
        try:
            rows.take(session.cooldown)
        except StreamExhausted:
            break
        offset += session.cooldown
    return session.records
