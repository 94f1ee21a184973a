"""Feasible models, elementary constraints and constrained least squares.

A feasible model keeps a subset of the continuous variables and partitions
the levels of every factor.  The cluster holding the reference level (level 1)
is the zero-coefficient cluster: its levels are indistinguishable from the
reference.  Equivalently, a model is the set of parameter vectors satisfying
a list of elementary constraints ``beta_jk = 0`` (:class:`Delete`) and
``beta_ik = beta_jk`` (:class:`Merge`).
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np
from numpy.typing import NDArray
from scipy.cluster.hierarchy import DisjointSet
from scipy.linalg import qr, solve_triangular

from .errors import InvalidConstraint, RankDeficient
from .model_matrix import RANK_TOL, DesignLayout, DesignMatrix, layout_of, positive_qr


@dataclass(frozen=True, order=True)
class Delete:
    """``beta_jk = 0``.  For ``k = 0`` this drops continuous variable ``j``;
    for a factor it ties level ``j`` to the reference level."""

    k: int
    j: int

    @property
    def indices(self) -> tuple[int, ...]:
        return (self.j,) if self.k == 0 else (1, self.j)

    def validate(self, layout: DesignLayout) -> None:
        if self.k == 0:
            ok = 1 <= self.j <= layout.p0
        else:
            ok = 1 <= self.k <= layout.n_factors and 2 <= self.j <= layout.levels(self.k)
        if not ok:
            raise InvalidConstraint(f"{self} is out of range for layout {layout}")

    def row(self, layout: DesignLayout) -> NDArray[np.float64]:
        a = np.zeros(layout.p)
        a[layout.column(self.k, self.j)] = 1.0
        return a

    def __str__(self) -> str:
        return f"b[{self.j},{self.k}] = 0"


@dataclass(frozen=True, order=True)
class Merge:
    """``beta_ik = beta_jk`` for two levels of factor ``k`` (stored ``i < j``).

    ``i = 1`` involves the reference level, whose coefficient is zero, so the
    constraint is the same as ``Delete(k, j)``; see :func:`merge`.
    """

    k: int
    i: int
    j: int

    def __post_init__(self):
        if self.i > self.j:
            i, j = self.j, self.i
            object.__setattr__(self, "i", i)
            object.__setattr__(self, "j", j)

    @property
    def indices(self) -> tuple[int, ...]:
        return (self.i, self.j)

    def validate(self, layout: DesignLayout) -> None:
        ok = (
            1 <= self.k <= layout.n_factors
            and 1 <= self.i < self.j <= layout.levels(self.k)
        )
        if not ok:
            raise InvalidConstraint(f"{self} is out of range for layout {layout}")

    def row(self, layout: DesignLayout) -> NDArray[np.float64]:
        a = np.zeros(layout.p)
        a[layout.column(self.k, self.j)] = 1.0
        if self.i > 1:
            a[layout.column(self.k, self.i)] = -1.0
        return a

    def __str__(self) -> str:
        return f"b[{self.i},{self.k}] = b[{self.j},{self.k}]"


ElementaryConstraint = Union[Delete, Merge]


def merge(k: int, i: int, j: int) -> ElementaryConstraint:
    """Constraint tying levels ``i`` and ``j`` of factor ``k``; a tie with the
    reference level comes back as a :class:`Delete`."""
    i, j = min(i, j), max(i, j)
    if i == j:
        raise InvalidConstraint(f"cannot merge level {i} of factor {k} with itself")
    return Delete(k, j) if i == 1 else Merge(k, i, j)


def constraint_sort_key(c: ElementaryConstraint) -> tuple:
    return (c.k, c.indices)


def constraint_matrix(constraints: Sequence[ElementaryConstraint], layout) -> NDArray[np.float64]:
    """Stack the constraint rows into a ``len(constraints) x p`` matrix."""
    layout = layout_of(layout)
    A = np.zeros((len(constraints), layout.p))
    for r, c in enumerate(constraints):
        A[r] = c.row(layout)
    return A


def _canonical_partition(clusters: Iterable[Iterable[int]]) -> tuple[tuple[int, ...], ...]:
    return tuple(sorted(tuple(sorted(int(x) for x in c)) for c in clusters))


@dataclass(frozen=True)
class FeasibleModel:
    """Retained continuous variables plus one level partition per factor.

    ``retained`` holds 1-based continuous indices.  ``partitions[k - 1]`` is
    the partition of ``{1, ..., p_k}``; clusters are sorted by their minimum,
    so the first cluster always contains the reference level.
    """

    layout: DesignLayout
    retained: tuple[int, ...]
    partitions: tuple[tuple[tuple[int, ...], ...], ...]

    def __post_init__(self):
        layout = self.layout
        retained = tuple(sorted(set(int(j) for j in self.retained)))
        if any(not 1 <= j <= layout.p0 for j in retained):
            raise InvalidConstraint(f"retained indices {retained} out of range 1..{layout.p0}")
        object.__setattr__(self, "retained", retained)
        partitions = tuple(_canonical_partition(P) for P in self.partitions)
        if len(partitions) != layout.n_factors:
            raise InvalidConstraint(
                f"got {len(partitions)} partitions for {layout.n_factors} factors"
            )
        for k, P in enumerate(partitions, start=1):
            members = [x for c in P for x in c]
            if any(not c for c in P) or sorted(members) != list(range(1, layout.levels(k) + 1)):
                raise InvalidConstraint(f"partition {P} of factor {k} is not a set partition")
        object.__setattr__(self, "partitions", partitions)

    @classmethod
    def full(cls, layout) -> FeasibleModel:
        layout = layout_of(layout)
        return cls(
            layout,
            tuple(range(1, layout.p0 + 1)),
            tuple(tuple((j,) for j in range(1, pk + 1)) for pk in layout.level_counts),
        )

    @property
    def deleted(self) -> tuple[int, ...]:
        kept = set(self.retained)
        return tuple(j for j in range(1, self.layout.p0 + 1) if j not in kept)

    @property
    def size(self) -> int:
        """Dimension of the parameter subspace, ``|M|``."""
        return 1 + len(self.retained) + sum(len(P) - 1 for P in self.partitions)

    def __len__(self) -> int:
        return self.size

    @cached_property
    def system(self) -> RegularConstraintSystem:
        return regularize(self)

    def constraints(self) -> list[ElementaryConstraint]:
        """A minimal list of elementary constraints defining the model."""
        return list(self.system.constraints)


def constraints_to_model(constraints: Iterable[ElementaryConstraint], layout) -> FeasibleModel:
    """Feasible model generated by a set of elementary constraints.

    Merges are closed transitively; ``Delete(k, j)`` on a factor joins level
    ``j`` to the reference cluster.
    """
    layout = layout_of(layout)
    dropped = set()
    sets = [DisjointSet(range(1, pk + 1)) for pk in layout.level_counts]
    for c in constraints:
        c.validate(layout)
        if c.k == 0:
            dropped.add(c.j)
        elif isinstance(c, Delete):
            sets[c.k - 1].merge(1, c.j)
        else:
            sets[c.k - 1].merge(c.i, c.j)
    retained = tuple(j for j in range(1, layout.p0 + 1) if j not in dropped)
    return FeasibleModel(layout, retained, tuple(s.subsets() for s in sets))


@dataclass(frozen=True, eq=False)
class RegularConstraintSystem:
    """Regular-form constraint system of a feasible model.

    ``perm`` orders the parameters as: intercept, retained continuous
    variables, the minimal level of every non-reference cluster, deleted
    continuous variables, then the remaining cluster members.  In that order
    the square matrix stacking an identity over the free parameters on top
    of the constraint rows is ``[[I, 0], [B, I]]`` with entries of ``B`` in
    ``{0, -1}``, and its inverse is ``[[I, 0], [-B, I]]``.

    ``restriction`` (``(p - n_free) x p``, one row per constraint) and
    ``expansion`` (``p x n_free``, mapping free coefficients to the full
    vector) are stored in the original parameter order.  ``groups[c]`` lists
    the original columns whose sum is column ``c`` of the reduced design.
    """

    perm: NDArray[np.int_]
    restriction: NDArray[np.float64]
    expansion: NDArray[np.float64]
    n_free: int
    groups: tuple[tuple[int, ...], ...]
    constraints: tuple[ElementaryConstraint, ...]

    @property
    def p(self) -> int:
        return self.restriction.shape[1]

    def permuted(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """``(A_M, A_M^-1)`` with rows and columns in ``perm`` order."""
        p, q = self.p, self.n_free
        A = np.zeros((p, p))
        A[:q, :q] = np.eye(q)
        A[q:, :] = self.restriction[:, self.perm]
        A_inv = np.zeros((p, p))
        A_inv[:, :q] = self.expansion[self.perm, :]
        A_inv[q:, q:] = np.eye(p - q)
        return A, A_inv


def regularize(model: FeasibleModel) -> RegularConstraintSystem:
    """Bring the constraints of ``model`` into regular form."""
    layout = model.layout
    col = layout.column
    lead: list[int] = [0]
    groups: list[tuple[int, ...]] = [(0,)]
    for j in model.retained:
        lead.append(col(0, j))
        groups.append((col(0, j),))
    for k, P in enumerate(model.partitions, start=1):
        for cluster in P[1:]:
            lead.append(col(k, cluster[0]))
            groups.append(tuple(col(k, j) for j in cluster))

    trail: list[int] = []
    anchors: list[int | None] = []
    constraints: list[ElementaryConstraint] = []
    for j in model.deleted:
        trail.append(col(0, j))
        anchors.append(None)
        constraints.append(Delete(0, j))
    for k, P in enumerate(model.partitions, start=1):
        for ci, cluster in enumerate(P):
            head = cluster[0]
            for j in cluster[1:]:
                trail.append(col(k, j))
                if ci == 0:
                    anchors.append(None)
                    constraints.append(Delete(k, j))
                else:
                    anchors.append(col(k, head))
                    constraints.append(Merge(k, head, j))

    p, q = layout.p, len(lead)
    restriction = np.zeros((p - q, p))
    for r, (t, a) in enumerate(zip(trail, anchors)):
        restriction[r, t] = 1.0
        if a is not None:
            restriction[r, a] = -1.0
    expansion = np.zeros((p, q))
    for c, members in enumerate(groups):
        expansion[list(members), c] = 1.0
    return RegularConstraintSystem(
        perm=np.array(lead + trail, dtype=np.intp),
        restriction=restriction,
        expansion=expansion,
        n_free=q,
        groups=tuple(groups),
        constraints=tuple(constraints),
    )


def _system(model_or_system) -> RegularConstraintSystem:
    if isinstance(model_or_system, FeasibleModel):
        return model_or_system.system
    return model_or_system


def reduced_design(X, system) -> NDArray[np.float64]:
    """``X @ expansion`` built from column selections and column sums."""
    system = _system(system)
    values = X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    Z = np.empty((values.shape[0], system.n_free))
    for c, members in enumerate(system.groups):
        if len(members) == 1:
            Z[:, c] = values[:, members[0]]
        else:
            Z[:, c] = values[:, list(members)].sum(axis=1)
    return Z


def expand_coefficients(system, free: NDArray[np.float64]) -> NDArray[np.float64]:
    """``expansion @ free``: copy each free coefficient into every member of its group."""
    system = _system(system)
    beta = np.zeros(system.p)
    for c, members in enumerate(system.groups):
        beta[list(members)] = free[c]
    return beta


def constrained_fit(X, y, model: FeasibleModel) -> tuple[NDArray[np.float64], float]:
    """Least squares restricted to ``model``; returns ``(beta_M, RSS_M)``.

    Merged coefficients are copies of one value and deleted ones are exact
    zeros.  Raises :class:`RankDeficient` if merging leaves the reduced
    design without full column rank.
    """
    system = model.system
    Z = reduced_design(X, system)
    y = np.asarray(y, dtype=float)
    names = None
    if isinstance(X, DesignMatrix):
        names = ["+".join(X.column_names[m] for m in g) for g in system.groups]
    Q, R = positive_qr(Z, names=names)
    free = solve_triangular(R, Q.T @ y)
    resid = y - Z @ free
    return expand_coefficients(system, free), float(resid @ resid)


def matrix_rank(A: NDArray[np.float64], tol: float = RANK_TOL) -> int:
    """Rank from a column-pivoted QR with a relative diagonal threshold."""
    if A.size == 0:
        return 0
    R = qr(A, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return 0
    return int(np.count_nonzero(d > tol * d[0]))


def model_intersection_dim(m1: FeasibleModel, m2: FeasibleModel) -> int:
    """Dimension of the intersection of two model subspaces: ``p`` minus the
    rank of both constraint sets stacked."""
    if m1.layout != m2.layout:
        raise InvalidConstraint("models are defined on different layouts")
    stacked = np.vstack([m1.system.restriction, m2.system.restriction])
    return m1.layout.p - matrix_rank(stacked)
