"""Bradley-Terry analysis of forced-choice pairwise votes.

A vote table counts, for every ordered pair of methods, how often observers preferred
the first. `fit_bradley_terry` finds the maximum-likelihood preference scales ``pi``
under ``P(i beats j) = pi_i / (pi_i + pi_j)`` with the minorization-maximization
iteration, and `significance_test` runs a likelihood-ratio test of ``pi_i = pi_j``
for each pair.

Usage
-----
```python
from hsi_demosaic.preference import PairwiseVoteTable, fit_bradley_terry

table = PairwiseVoteTable.from_csv("votes.csv")
fit = fit_bradley_terry(table)
fit.to_frame()
```
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
import polars as pl
from scipy import sparse, stats
from scipy.sparse import csgraph

from .errors import (
    ConfigurationError,
    DivergenceError,
    EstimationError,
    IterationLimitError,
    ParseError,
)

logger = logging.getLogger(__name__)

VOTE_COLUMNS = ("method_a", "method_b", "wins_a", "wins_b")
SIGNIFICANCE_TEST = "likelihood-ratio, chi2(1), pi_i = pi_j"


@dataclass(frozen=True)
class PairwiseVoteTable:
    """Vote counts; ``wins[i, j]`` is how often method ``i`` was preferred over ``j``.

    Attributes:
        methods (tuple[str, ...]): ``M >= 2`` distinct method names.
        wins (np.ndarray): ``M x M`` non-negative integer matrix, zero diagonal.

    """

    methods: tuple[str, ...]
    wins: np.ndarray

    def __post_init__(self) -> None:  # noqa: D105
        methods = tuple(self.methods)
        wins = np.array(self.wins)
        if len(methods) < 2 or len(set(methods)) != len(methods):  # noqa: PLR2004
            raise ConfigurationError("A vote table needs at least two distinct methods.")
        if wins.shape != (len(methods), len(methods)):
            raise ConfigurationError(
                f"wins must be {len(methods)}x{len(methods)}, got {wins.shape}."
            )
        if not np.all(np.equal(np.mod(wins, 1), 0)) or (wins < 0).any():
            raise ConfigurationError("Win counts must be non-negative integers.")
        if np.diagonal(wins).any():
            raise ConfigurationError("A method cannot be compared with itself.")
        wins = wins.astype(np.int64)
        wins.setflags(write=False)
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "wins", wins)

    @property
    def comparisons(self) -> np.ndarray:
        """Symmetric matrix of comparison counts ``n_ij``."""
        return self.wins + self.wins.T

    def index(self, method: str) -> int:  # noqa: D102
        return self.methods.index(method)

    def scaled(self, factor: int) -> PairwiseVoteTable:
        """Return the table with every count multiplied by ``factor``."""
        return PairwiseVoteTable(self.methods, self.wins * factor)

    @classmethod
    def from_frame(cls, frame: pl.DataFrame) -> PairwiseVoteTable:
        """Build from rows ``method_a, method_b, wins_a, wins_b``.

        Methods are ordered by first appearance; repeated pairs are summed.

        Raises:
            ConfigurationError: If columns are missing or a row pairs a method with
                itself.

        """
        missing = set(VOTE_COLUMNS) - set(frame.columns)
        if missing:
            raise ConfigurationError(f"Vote table is missing columns {sorted(missing)}.")
        methods: list[str] = []
        for row in frame.select(VOTE_COLUMNS[:2]).iter_rows():
            methods += [m for m in row if m not in methods]
        wins = np.zeros((len(methods), len(methods)), dtype=np.int64)
        for a, b, wins_a, wins_b in frame.select(VOTE_COLUMNS).iter_rows():
            i, j = methods.index(a), methods.index(b)
            if i == j:
                raise ConfigurationError(f"Row compares {a!r} with itself.")
            wins[i, j] += wins_a
            wins[j, i] += wins_b
        return cls(tuple(methods), wins)

    @classmethod
    def from_csv(cls, path: str | Path) -> PairwiseVoteTable:
        """Read a vote CSV (see `from_frame`)."""
        try:
            frame = pl.read_csv(
                path,
                schema_overrides={"wins_a": pl.Int64, "wins_b": pl.Int64},
            )
        except pl.exceptions.PolarsError as exc:
            raise ParseError(f"Unreadable vote table ({exc})", 0, path) from exc
        return cls.from_frame(frame)

    def to_frame(self) -> pl.DataFrame:
        """One row per compared unordered pair."""
        rows = [
            (
                self.methods[i],
                self.methods[j],
                int(self.wins[i, j]),
                int(self.wins[j, i]),
            )
            for i in range(len(self.methods))
            for j in range(i + 1, len(self.methods))
            if self.comparisons[i, j]
        ]
        return pl.DataFrame(rows, schema=list(VOTE_COLUMNS), orient="row")


@dataclass(frozen=True)
class BradleyTerryFit:
    """Fitted preference scales, normalised to sum to one."""

    methods: tuple[str, ...]
    pi: np.ndarray
    log_likelihood: float
    iterations: int

    def ratio(self, method_a: str, method_b: str) -> float:
        """How many times more likely ``method_a`` is preferred over ``method_b``."""
        return preference_ratio(
            self.pi, self.methods.index(method_a), self.methods.index(method_b)
        )

    def to_frame(self) -> pl.DataFrame:  # noqa: D102
        return pl.DataFrame({"method": list(self.methods), "pi": self.pi})


def log_likelihood(wins: np.ndarray, pi: np.ndarray) -> float:
    """``sum_ij wins_ij * log(pi_i / (pi_i + pi_j))``."""
    total = pi[:, None] + pi[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(wins > 0, wins * np.log(pi[:, None] / total), 0.0)
    return float(terms.sum())


def _check_connected(table: PairwiseVoteTable) -> None:
    graph = sparse.csr_matrix(table.comparisons > 0)
    count, labels = csgraph.connected_components(graph, directed=False)
    if count > 1:
        groups = [
            [m for m, label in zip(table.methods, labels, strict=True) if label == c]
            for c in range(count)
        ]
        raise EstimationError(
            f"Comparison graph is disconnected into {count} components: {groups}."
        )


def _check_interior(table: PairwiseVoteTable, groups: np.ndarray) -> None:
    """Raise when a parameter group's MLE lies on the boundary."""
    for group in np.unique(groups):
        members = groups == group
        external_wins = int(table.wins[members][:, ~members].sum())
        external_losses = int(table.wins[~members][:, members].sum())
        if external_wins + external_losses == 0:
            continue
        names = ", ".join(np.array(table.methods)[members])
        if external_losses == 0:
            raise DivergenceError(
                f"{names} won every comparison; its preference scale is unbounded.",
                names,
            )
        if external_wins == 0:
            raise DivergenceError(
                f"{names} lost every comparison; its preference scale is zero.", names
            )


def _check_strongly_connected(table: PairwiseVoteTable, groups: np.ndarray) -> None:
    """Raise when one set of groups beat every group outside it.

    The win graph has an edge ``a -> b`` when group ``a`` beat group ``b`` at least
    once; the maximum-likelihood estimate is finite only if that graph is strongly
    connected.
    """
    membership = np.eye(int(groups.max()) + 1)[groups]
    group_wins = membership.T @ table.wins @ membership
    np.fill_diagonal(group_wins, 0)
    count, labels = csgraph.connected_components(
        sparse.csr_matrix(group_wins > 0), directed=True, connection="strong"
    )
    if count == 1:
        return
    for component in range(count):
        inside = labels == component
        if group_wins[inside][:, ~inside].sum() == 0:
            names = ", ".join(np.array(table.methods)[inside[groups]])
            raise DivergenceError(
                f"{names} lost every comparison against the other methods; "
                "their preference scales are zero.",
                names,
            )


def _fit_grouped(
    table: PairwiseVoteTable,
    groups: np.ndarray,
    tol: float,
    max_iter: int,
) -> BradleyTerryFit:
    """MM iteration where methods in one group share a single scale."""
    if max_iter < 1 or not tol > 0:
        raise ConfigurationError("max_iter must be >= 1 and tol positive.")
    _check_connected(table)
    _check_interior(table, groups)
    _check_strongly_connected(table, groups)
    wins, n = table.wins.astype(np.float64), table.comparisons.astype(np.float64)
    n_groups = int(groups.max()) + 1
    group_wins = np.bincount(groups, weights=wins.sum(axis=1), minlength=n_groups)
    theta = np.full(n_groups, 1.0 / n_groups)
    for iteration in range(1, max_iter + 1):
        pi = theta[groups]
        denominators = (n / (pi[:, None] + pi[None, :])).sum(axis=1)
        group_denominators = np.bincount(
            groups, weights=denominators, minlength=n_groups
        )
        updated = group_wins / group_denominators
        updated /= updated.sum()
        change = np.max(np.abs(updated - theta) / theta)
        theta = updated
        logger.debug(
            "Bradley-Terry iteration %d: max relative change %.3e", iteration, change
        )
        if change < tol:
            break
    else:
        raise IterationLimitError(
            f"Bradley-Terry fit did not converge within {max_iter} iterations "
            f"(last relative change {change:.3e})."
        )
    pi = theta[groups] / theta[groups].sum()
    return BradleyTerryFit(table.methods, pi, log_likelihood(wins, pi), iteration)


def fit_bradley_terry(
    table: PairwiseVoteTable, tol: float = 1e-10, max_iter: int = 10_000
) -> BradleyTerryFit:
    """Maximum-likelihood Bradley-Terry preference scales.

    Args:
        table (PairwiseVoteTable): Vote counts.
        tol (float): Stop when every scale changes by less than this relative amount.
        max_iter (int): Maximum MM sweeps.

    Returns:
        BradleyTerryFit: Scales summing to one, log-likelihood and iteration count.

    Raises:
        EstimationError: If the comparison graph is disconnected.
        DivergenceError: If a method won (or lost) all its comparisons, or a set of
            methods beat every method outside it.
        IterationLimitError: If the iteration does not converge within ``max_iter``.

    Example:
        ```python
        >>> table = PairwiseVoteTable(("RGB", "Ours"), [[0, 52], [155, 0]])
        >>> fit_bradley_terry(table).pi
        array([0.25120773, 0.74879227])
        ```

    """
    fit = _fit_grouped(table, np.arange(len(table.methods)), tol, max_iter)
    logger.info(
        "Bradley-Terry fit in %d iterations: %s",
        fit.iterations,
        dict(zip(fit.methods, np.round(fit.pi, 4).tolist(), strict=True)),
    )
    if fit.iterations > max_iter // 2:
        logger.warning("Bradley-Terry fit needed %d iterations", fit.iterations)
    return fit


def preference_ratio(pi: npt.ArrayLike, i: int, j: int) -> float:
    """``pi_i / pi_j``."""
    pi = np.asarray(pi, dtype=np.float64)
    return float(pi[i] / pi[j])


def significance_test(
    table: PairwiseVoteTable,
    fit: BradleyTerryFit | None = None,
    pairs: Sequence[tuple[str, str]] | None = None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> pl.DataFrame:
    """Likelihood-ratio test of ``pi_i = pi_j`` for each pair of methods.

    The constrained model ties the two scales and is refitted; the statistic
    ``2 (ll_full - ll_tied)`` is referred to a chi-squared distribution with one
    degree of freedom.

    Args:
        table (PairwiseVoteTable): Vote counts.
        fit (BradleyTerryFit | None): Unconstrained fit; computed when omitted.
        pairs: Method-name pairs to test; all unordered pairs by default.
        tol (float): Solver tolerance for the constrained refits.
        max_iter (int): Solver iteration cap.

    Returns:
        pl.DataFrame: Columns ``method_a, method_b, statistic, p_value, test``.

    """
    fit = fit or fit_bradley_terry(table, tol, max_iter)
    methods = table.methods
    if pairs is None:
        pairs = [
            (methods[i], methods[j])
            for i in range(len(methods))
            for j in range(i + 1, len(methods))
        ]
    rows = []
    for a, b in pairs:
        i, j = methods.index(a), methods.index(b)
        groups = np.arange(len(methods))
        groups[j] = i
        groups = np.unique(groups, return_inverse=True)[1]
        tied = _fit_grouped(table, groups, tol, max_iter)
        statistic = max(2.0 * (fit.log_likelihood - tied.log_likelihood), 0.0)
        p_value = float(stats.chi2.sf(statistic, df=1))
        rows.append((a, b, statistic, p_value, SIGNIFICANCE_TEST))
        logger.info("LR test %s vs %s: statistic %.3f, p %.3e", a, b, statistic, p_value)
    return pl.DataFrame(
        rows,
        schema={
            "method_a": pl.String,
            "method_b": pl.String,
            "statistic": pl.Float64,
            "p_value": pl.Float64,
            "test": pl.String,
        },
        orient="row",
    )


def p_value_matrix(tests: pl.DataFrame, methods: Sequence[str]) -> pl.DataFrame:
    """Square, symmetric p-value matrix from `significance_test` output."""
    values = np.full((len(methods), len(methods)), np.nan)
    np.fill_diagonal(values, 1.0)
    for a, b, p in tests.select("method_a", "method_b", "p_value").iter_rows():
        i, j = methods.index(a), methods.index(b)
        values[i, j] = values[j, i] = p
    return pl.DataFrame(
        {"method": list(methods), **{m: values[:, k] for k, m in enumerate(methods)}}
    )
