"""Design matrices with factor bookkeeping and the full-model QR fit.

Columns are laid out as ``[1 | X0 | X1 | ... | Xl]``: the intercept, then the
continuous variables in declaration order, then one dummy block per factor.
A factor with ``p_k`` levels contributes ``p_k - 1`` zero-one columns; its
first declared level is the reference and has no column.

Parameters are addressed by ``(k, j)`` pairs.  Block ``k = 0`` holds the
intercept (``j = 0``) and the continuous variables (``j = 1..p0``); block
``k >= 1`` is the k-th factor with level numbers ``j = 2..p_k`` (level 1 is
the reference).
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_triangular

from .errors import InputError, RankDeficient, TooFewRows, UnknownLevel

#: Relative threshold on ``|R_ii| / max_j |R_jj|`` below which a column is
#: declared linearly dependent.
RANK_TOL = 1e-10

#: ``||y||^2 - ||z||^2`` below ``RSS_FLOOR * ||y||^2`` is treated as an exact fit.
RSS_FLOOR = 1e-12

KINDS = ("response", "continuous", "factor")


@dataclass(frozen=True)
class ColumnSpec:
    """Role of one column of the input table.

    For factors ``levels`` fixes the level order; the first entry is the
    reference level.
    """

    name: str
    kind: str
    levels: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"column {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "levels", tuple(self.levels))
        if self.kind == "factor":
            if not self.levels:
                raise InputError(f"factor {self.name!r} has no levels")
            if len(set(self.levels)) != len(self.levels):
                raise InputError(f"factor {self.name!r} has duplicate levels")
        elif self.levels:
            raise InputError(f"column {self.name!r}: only factors take levels")


@dataclass(frozen=True)
class DesignLayout:
    """Block structure of a design: ``p0`` continuous columns and the level
    count ``p_k`` of every factor."""

    p0: int
    level_counts: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "level_counts", tuple(int(c) for c in self.level_counts))
        if self.p0 < 0 or any(c < 1 for c in self.level_counts):
            raise InputError("invalid design layout")

    @property
    def n_factors(self) -> int:
        return len(self.level_counts)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        """Column index of level 2 of each factor (one entry per factor)."""
        out = []
        start = 1 + self.p0
        for pk in self.level_counts:
            out.append(start)
            start += pk - 1
        return tuple(out)

    @property
    def p(self) -> int:
        return 1 + self.p0 + sum(c - 1 for c in self.level_counts)

    def levels(self, k: int) -> int:
        """Number of levels ``p_k`` of factor ``k`` (1-based)."""
        return self.level_counts[k - 1]

    def column(self, k: int, j: int) -> int:
        """Column of parameter ``(k, j)``."""
        if k == 0:
            if not 0 <= j <= self.p0:
                raise IndexError(f"continuous index {j} out of range")
            return j
        if not 1 <= k <= self.n_factors:
            raise IndexError(f"factor index {k} out of range")
        if not 2 <= j <= self.level_counts[k - 1]:
            raise IndexError(f"level {j} of factor {k} has no column")
        return self.offsets[k - 1] + j - 2

    def factor_columns(self, k: int) -> range:
        start = self.offsets[k - 1]
        return range(start, start + self.level_counts[k - 1] - 1)

    @cached_property
    def block_index(self) -> tuple[tuple[int, int], ...]:
        """``(k, j)`` of every column, in column order."""
        out = [(0, j) for j in range(self.p0 + 1)]
        for k, pk in enumerate(self.level_counts, start=1):
            out.extend((k, j) for j in range(2, pk + 1))
        return tuple(out)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """A full-rank model matrix together with its column-block metadata."""

    values: NDArray[np.float64]
    layout: DesignLayout
    continuous_names: tuple[str, ...] = ()
    factor_names: tuple[str, ...] = ()
    factor_levels: tuple[tuple, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.layout.p:
            raise InputError(
                f"design has {values.shape[-1]} columns, layout needs {self.layout.p}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if not self.continuous_names:
            object.__setattr__(
                self, "continuous_names", tuple(f"x{j}" for j in range(1, self.layout.p0 + 1))
            )
        if not self.factor_names:
            object.__setattr__(
                self, "factor_names", tuple(f"f{k}" for k in range(1, self.layout.n_factors + 1))
            )
        if not self.factor_levels:
            object.__setattr__(
                self,
                "factor_levels",
                tuple(tuple(str(j) for j in range(1, pk + 1)) for pk in self.layout.level_counts),
            )

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def p0(self) -> int:
        return self.layout.p0

    @property
    def level_counts(self) -> tuple[int, ...]:
        return self.layout.level_counts

    @property
    def block_index(self) -> tuple[tuple[int, int], ...]:
        return self.layout.block_index

    @cached_property
    def column_names(self) -> tuple[str, ...]:
        names = ["(Intercept)", *self.continuous_names]
        for fname, levels in zip(self.factor_names, self.factor_levels):
            names.extend(f"{fname}:{lvl}" for lvl in levels[1:])
        return tuple(names)


def layout_of(obj) -> DesignLayout:
    """Accept a :class:`DesignMatrix` or a :class:`DesignLayout`."""
    if isinstance(obj, DesignLayout):
        return obj
    if isinstance(obj, DesignMatrix):
        return obj.layout
    raise TypeError(f"expected DesignMatrix or DesignLayout, got {type(obj).__name__}")


def dummy_block(codes: NDArray[np.int_], n_levels: int) -> NDArray[np.float64]:
    """Zero-one columns for levels ``2..n_levels`` of 0-based level codes."""
    block = np.zeros((codes.shape[0], n_levels - 1))
    rows = np.nonzero(codes > 0)[0]
    block[rows, codes[rows] - 1] = 1.0
    return block


def _split_specs(specs: Sequence[ColumnSpec]):
    responses = [s for s in specs if s.kind == "response"]
    if len(responses) != 1:
        raise InputError(f"expected exactly one response column, got {len(responses)}")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise InputError("duplicate column names in schema")
    continuous = [s for s in specs if s.kind == "continuous"]
    factors = [s for s in specs if s.kind == "factor"]
    return responses[0], continuous, factors


def _column(dataset: Mapping, name: str):
    try:
        return dataset[name]
    except KeyError:
        raise InputError(f"column {name!r} not found in dataset") from None


def response_vector(dataset: Mapping, specs: Sequence[ColumnSpec]) -> NDArray[np.float64]:
    response, _, _ = _split_specs(specs)
    y = np.asarray(_column(dataset, response.name), dtype=float)
    if np.isnan(y).any():
        raise InputError(f"response {response.name!r} has missing values")
    return y


def build_design_matrix(dataset: Mapping, specs: Sequence[ColumnSpec]) -> DesignMatrix:
    """Build the dummy-coded design matrix described by ``specs``.

    ``dataset`` maps column names to equal-length sequences (a dict of lists,
    a pandas DataFrame, ...).  Raises :class:`UnknownLevel` for factor values
    outside the declared levels, :class:`TooFewRows` when ``n <= p`` and
    :class:`RankDeficient` when the columns are linearly dependent.
    """
    response, continuous, factors = _split_specs(specs)
    n = len(_column(dataset, response.name))

    blocks = [np.ones((n, 1))]
    for spec in continuous:
        col = np.asarray(_column(dataset, spec.name), dtype=float)
        if col.shape != (n,):
            raise InputError(f"column {spec.name!r} has length {len(col)}, expected {n}")
        if np.isnan(col).any():
            row = int(np.flatnonzero(np.isnan(col))[0])
            raise InputError(f"column {spec.name!r}: missing value at row {row}")
        blocks.append(col[:, None])
    for spec in factors:
        raw = list(_column(dataset, spec.name))
        if len(raw) != n:
            raise InputError(f"column {spec.name!r} has length {len(raw)}, expected {n}")
        index = {lvl: i for i, lvl in enumerate(spec.levels)}
        codes = np.empty(n, dtype=np.int64)
        for row, value in enumerate(raw):
            try:
                codes[row] = index[value]
            except (KeyError, TypeError):
                raise UnknownLevel(spec.name, value, row) from None
        blocks.append(dummy_block(codes, len(spec.levels)))

    layout = DesignLayout(len(continuous), tuple(len(s.levels) for s in factors))
    X = DesignMatrix(
        np.hstack(blocks),
        layout,
        continuous_names=tuple(s.name for s in continuous),
        factor_names=tuple(s.name for s in factors),
        factor_levels=tuple(s.levels for s in factors),
    )
    if X.n <= X.p:
        raise TooFewRows(X.n, X.p)
    positive_qr(X.values, names=X.column_names)
    return X


def positive_qr(A: NDArray[np.float64], names: Sequence[str] | None = None, tol: float = RANK_TOL):
    """Thin QR with ``diag(R) > 0``; raise :class:`RankDeficient` on rank loss."""
    Q, R = np.linalg.qr(A)
    d = np.diag(R)
    scale = np.abs(d).max() if d.size else 0.0
    bad = np.flatnonzero(np.abs(d) <= tol * scale) if scale > 0 else np.arange(d.size)
    if bad.size:
        labels = [names[i] for i in bad] if names is not None else [int(i) for i in bad]
        raise RankDeficient(labels)
    signs = np.sign(d)
    return Q * signs, R * signs[:, None]


@dataclass(frozen=True, eq=False)
class FullModelFit:
    """QR-derived quantities of the unconstrained least-squares fit."""

    R: NDArray[np.float64]
    R_inv: NDArray[np.float64]
    z: NDArray[np.float64]
    beta_hat: NDArray[np.float64]
    sigma2_hat: float
    y_sq_norm: float
    n: int
    p: int
    rss: float


def fit_full_model(X: DesignMatrix | NDArray[np.float64], y) -> FullModelFit:
    """Least-squares fit of the full model through ``X = QR``.

    ``beta_hat = R^-1 z`` and ``sigma2_hat = (||y||^2 - ||z||^2) / (n - p)``
    with ``z = Q^T y``.  The QR sign convention makes ``diag(R)`` positive.
    """
    names = X.column_names if isinstance(X, DesignMatrix) else None
    A = X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = A.shape
    if y.shape != (n,):
        raise InputError(f"response has shape {y.shape}, expected ({n},)")
    if n <= p:
        raise TooFewRows(n, p)
    Q, R = positive_qr(A, names=names)
    z = Q.T @ y
    R_inv = solve_triangular(R, np.eye(p))
    y_sq = float(y @ y)
    rss = y_sq - float(z @ z)
    if rss <= RSS_FLOOR * y_sq:
        rss = 0.0
    return FullModelFit(
        R=R,
        R_inv=R_inv,
        z=z,
        beta_hat=R_inv @ z,
        sigma2_hat=rss / (n - p),
        y_sq_norm=y_sq,
        n=n,
        p=p,
        rss=rss,
    )
