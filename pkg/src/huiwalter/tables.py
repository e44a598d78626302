"""Multi-population contingency tables of joint binary test outcomes.

Cells are ordered so that, for two tests, a population's count vector reads
``(a, b, c, d)``: both positive, only test 1 positive, only test 2 positive,
both negative.  In general the cell index of an outcome pattern is the
integer whose binary digits are the *negated* outcomes with test 1 as the
most significant bit, so index 0 is always the all-positive pattern.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import (
    DegenerateMarginError,
    InputError,
    UnknownPopulationError,
    UnsupportedArityError,
)

MAX_TESTS = 8


def pattern_bits(n_tests: int) -> np.ndarray:
    """Boolean matrix ``(2**n_tests, n_tests)``; row c holds the outcomes of cell c."""
    idx = np.arange(2**n_tests)[:, None]
    shifts = n_tests - 1 - np.arange(n_tests)[None, :]
    return ((idx >> shifts) & 1) == 0


def cell_index(outcomes: Sequence[int]) -> int:
    index = 0
    for bit in outcomes:
        if bit not in (0, 1, True, False):
            raise InputError(f"outcome {bit!r} is not binary")
        index = (index << 1) | (1 - int(bit))
    return index


def pattern_string(index: int, n_tests: int) -> str:
    """Bit-string of a cell, character t is the outcome of test t+1."""
    return "".join("0" if (index >> (n_tests - 1 - t)) & 1 else "1" for t in range(n_tests))


def parse_pattern(text: str) -> tuple[int, ...]:
    if not text or set(text) - {"0", "1"}:
        raise InputError(f"bad outcome pattern {text!r}")
    return tuple(int(ch) for ch in text)


@dataclass(frozen=True)
class MarginalSums:
    """Row and column sums of one population's 2x2 table."""

    g: float  # test 1 positive (a + b)
    h: float  # test 1 negative (c + d)
    e: float  # test 2 positive (a + c)
    f: float  # test 2 negative (b + d)
    n: float


@dataclass(frozen=True)
class GTestResult:
    statistic: float
    df: int
    p_value: float


class ContingencyTable:
    """Per-population counts over the joint outcome patterns of ``n_tests`` tests.

    Integer tables store counts as ``uint64``.  Real-valued tables (expected
    counts) are allowed and stored as ``float64``.
    """

    def __init__(self, n_tests: int, populations: Iterable = (), counts=None):
        if not 1 <= n_tests <= MAX_TESTS:
            raise UnsupportedArityError(f"n_tests must be in [1, {MAX_TESTS}], got {n_tests}")
        self.n_tests = int(n_tests)
        self.populations = [str(p) for p in populations]
        if len(set(self.populations)) != len(self.populations):
            raise InputError("duplicate population ids")
        shape = (len(self.populations), 2**self.n_tests)
        if counts is None:
            self.counts = np.zeros(shape, dtype=np.uint64)
        else:
            arr = np.asarray(counts)
            if arr.shape != shape:
                raise InputError(f"counts shape {arr.shape} does not match {shape}")
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise InputError("counts must be finite and non-negative")
            if np.issubdtype(arr.dtype, np.integer):
                self.counts = arr.astype(np.uint64)
            else:
                self.counts = arr.astype(np.float64)

    @classmethod
    def from_cells(cls, cells: dict, n_tests: int = 2) -> "ContingencyTable":
        """Build from ``{population: counts-in-cell-order}``."""
        pops = list(cells)
        return cls(n_tests, pops, np.array([cells[p] for p in pops]))

    @property
    def n_populations(self) -> int:
        return len(self.populations)

    @property
    def n_cells(self) -> int:
        return 2**self.n_tests

    @property
    def is_integer(self) -> bool:
        return np.issubdtype(self.counts.dtype, np.integer)

    def index_of(self, population) -> int:
        try:
            return self.populations.index(str(population))
        except ValueError:
            raise UnknownPopulationError(f"unknown population {population!r}") from None

    def add_population(self, population) -> int:
        population = str(population)
        if population in self.populations:
            raise InputError(f"population {population!r} already present")
        self.populations.append(population)
        row = np.zeros((1, self.n_cells), dtype=self.counts.dtype)
        self.counts = np.vstack([self.counts, row])
        return len(self.populations) - 1

    def increment(self, population, outcomes: Sequence[int], count=1) -> "ContingencyTable":
        """Add ``count`` observations of ``outcomes`` to ``population`` in place."""
        if len(outcomes) != self.n_tests:
            raise InputError(f"expected {self.n_tests} outcomes, got {len(outcomes)}")
        i = self.index_of(population)
        self.counts[i, cell_index(outcomes)] += count
        return self

    def cells(self, population) -> np.ndarray:
        return self.counts[self.index_of(population)]

    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def total(self, population) -> float:
        return self.cells(population).sum()

    def marginals(self, population) -> MarginalSums:
        if self.n_tests != 2:
            raise UnsupportedArityError("marginal sums are defined for two tests only")
        a, b, c, d = (self._scalar(v) for v in self.cells(population))
        return MarginalSums(g=a + b, h=c + d, e=a + c, f=b + d, n=a + b + c + d)

    def _scalar(self, value):
        return int(value) if self.is_integer else float(value)

    def pairwise(self, population, test_i: int = 0, test_j: int = 1) -> np.ndarray:
        """2x2 agreement table of two tests within a population, rows = test_i (+, -)."""
        bits = pattern_bits(self.n_tests)
        cells = self.cells(population).astype(np.float64)
        out = np.zeros((2, 2))
        for r, c in itertools.product((0, 1), repeat=2):
            mask = (bits[:, test_i] == (r == 0)) & (bits[:, test_j] == (c == 0))
            out[r, c] = cells[mask].sum()
        return out

    def scaled(self, factor) -> "ContingencyTable":
        counts = self.counts * factor
        if self.is_integer and float(factor).is_integer():
            counts = counts.astype(np.uint64)
        return ContingencyTable(self.n_tests, self.populations, counts)

    def subset(self, populations: Sequence) -> "ContingencyTable":
        rows = [self.index_of(p) for p in populations]
        return ContingencyTable(self.n_tests, [self.populations[r] for r in rows], self.counts[rows])

    def bit_flipped(self) -> "ContingencyTable":
        """Same table with every outcome negated (cell c maps to cell 2**n-1-c)."""
        return ContingencyTable(self.n_tests, self.populations, self.counts[:, ::-1].copy())

    def copy(self) -> "ContingencyTable":
        return ContingencyTable(self.n_tests, self.populations, self.counts.copy())

    def __eq__(self, other):
        if not isinstance(other, ContingencyTable):
            return NotImplemented
        return (
            self.n_tests == other.n_tests
            and self.populations == other.populations
            and self.counts.dtype == other.counts.dtype
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self):
        return f"ContingencyTable(n_tests={self.n_tests}, populations={self.populations}, counts={self.counts.tolist()})"

    # CSV: header population,pattern,count; every cell written, zeros included.

    def to_csv(self, fh=None) -> str | None:
        buf = io.StringIO() if fh is None else fh
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["population", "pattern", "count"])
        for i, pop in enumerate(self.populations):
            for c in range(self.n_cells):
                value = self.counts[i, c]
                writer.writerow([pop, pattern_string(c, self.n_tests), int(value) if self.is_integer else repr(float(value))])
        return buf.getvalue() if fh is None else None

    @classmethod
    def from_csv(cls, fh) -> "ContingencyTable":
        if isinstance(fh, str):
            fh = io.StringIO(fh)
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["population", "pattern", "count"]:
            raise InputError("expected header 'population,pattern,count'", line=1)
        rows = {}
        order = []
        n_tests = None
        integer = True
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise InputError(f"expected 3 fields, got {len(row)}", line=lineno)
            pop, pattern, raw = (field.strip() for field in row)
            try:
                outcomes = parse_pattern(pattern)
            except InputError as exc:
                raise InputError(str(exc), line=lineno) from None
            if n_tests is None:
                n_tests = len(outcomes)
            elif len(outcomes) != n_tests:
                raise InputError("pattern length changes", line=lineno)
            try:
                value = int(raw)
            except ValueError:
                try:
                    value = float(raw)
                except ValueError:
                    raise InputError(f"bad count {raw!r}", line=lineno) from None
                integer = False
            if not (value >= 0 and math.isfinite(value)):
                raise InputError(f"negative or non-finite count {raw!r}", line=lineno)
            if pop not in rows:
                rows[pop] = {}
                order.append(pop)
            rows[pop][cell_index(outcomes)] = rows[pop].get(cell_index(outcomes), 0) + value
        if n_tests is None:
            raise InputError("table file has no rows")
        dtype = np.uint64 if integer else np.float64
        counts = np.zeros((len(order), 2**n_tests), dtype=dtype)
        for i, pop in enumerate(order):
            for c, value in rows[pop].items():
                counts[i, c] = value
        return cls(n_tests, order, counts)


def tabulate(events: Iterable[tuple], populations: Sequence | None = None, n_tests: int | None = None) -> ContingencyTable:
    """Cross-tabulate ``(population, outcomes)`` pairs.

    Populations default to the sorted set of ids seen, so the result does not
    depend on event order.
    """
    events = [(str(pop), tuple(int(o) for o in outcomes)) for pop, outcomes in events]
    if n_tests is None:
        n_tests = len(events[0][1]) if events else 2
    if populations is None:
        populations = sorted({pop for pop, _ in events})
    table = ContingencyTable(n_tests, populations)
    for k, (pop, outcomes) in enumerate(events):
        if len(outcomes) != n_tests:
            raise InputError(f"event {k} has {len(outcomes)} outcomes, expected {n_tests}")
        table.increment(pop, outcomes)
    return table


def g_test(observed) -> GTestResult:
    """Log-likelihood ratio test of independence for a two-way table."""
    obs = np.asarray(observed, dtype=np.float64)
    if obs.ndim != 2:
        raise InputError("g_test expects a two-dimensional table")
    if np.any(obs < 0):
        raise InputError("observed counts must be non-negative")
    rows = obs.sum(axis=1)
    cols = obs.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise DegenerateMarginError("table has an all-zero row or column")
    expected = np.outer(rows, cols) / obs.sum()
    pos = obs > 0
    g = 2.0 * float(np.sum(obs[pos] * np.log(obs[pos] / expected[pos])))
    g = max(g, 0.0)
    df = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    p = float(stats.chi2.sf(g, df)) if df > 0 else 1.0
    return GTestResult(statistic=g, df=df, p_value=min(max(p, 0.0), 1.0))


def goodness_of_fit(table: ContingencyTable, expected: np.ndarray, n_free: int) -> GTestResult:
    """G statistic of observed cells against model-expected cells.

    Degrees of freedom are the number of free cells minus ``n_free`` fitted
    parameters; when that is not positive the test is vacuous and p = 1.
    """
    obs = table.counts.astype(np.float64)
    pos = obs > 0
    if np.any(expected[pos] <= 0):
        return GTestResult(statistic=math.inf, df=0, p_value=0.0)
    g = max(2.0 * float(np.sum(obs[pos] * np.log(obs[pos] / expected[pos]))), 0.0)
    df = table.n_populations * (table.n_cells - 1) - n_free
    if df <= 0:
        return GTestResult(statistic=g, df=0, p_value=1.0)
    return GTestResult(statistic=g, df=df, p_value=float(stats.chi2.sf(g, df)))


def independence_tests(table: ContingencyTable) -> list[dict]:
    """Pairwise agreement G-tests per population, plus the pooled table.

    Failures (zero margins) are reported in-line rather than raised.
    """
    results = []
    for ti, tj in itertools.combinations(range(table.n_tests), 2):
        pooled = np.zeros((2, 2))
        for pop in table.populations:
            sub = table.pairwise(pop, ti, tj)
            pooled += sub
            results.append(_run_g(sub, pop, ti, tj))
        results.append(_run_g(pooled, None, ti, tj))
    return results


def _run_g(sub, population, ti, tj) -> dict:
    entry = {"population": population, "tests": [ti + 1, tj + 1]}
    try:
        res = g_test(sub)
    except DegenerateMarginError as exc:
        entry["error"] = str(exc)
    else:
        entry.update(statistic=res.statistic, df=res.df, p_value=res.p_value)
    return entry
