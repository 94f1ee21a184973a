"""Delete-or-merge model selection for linear models.

One call of :func:`dmr` performs five steps:

1. squared t-statistics for every elementary constraint of the full model,
   computed from one QR factorization;
2. per factor, agglomerative clustering of its levels with the squared
   t-statistics as dissimilarities;
3. ordering of all constraints (continuous deletions and dendrogram merges)
   by cutting height;
4. residual sums of squares of the nested models obtained by imposing the
   ordered constraints one at a time, via a QR-based recursion;
5. selection of the path model minimizing the information criterion.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .constraints import (
    Delete,
    ElementaryConstraint,
    FeasibleModel,
    Merge,
    constrained_fit,
    constraint_matrix,
    constraints_to_model,
    merge,
)
from .errors import DegenerateConstraints, InputError, ZeroRSS, ZeroVariance
from .model_matrix import RANK_TOL, DesignLayout, DesignMatrix, FullModelFit, fit_full_model, layout_of

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Step 1: squared statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SquaredStatistics:
    """Squared test statistics of all elementary constraints.

    ``continuous[j - 1]`` belongs to ``Delete(0, j)``.  ``dissimilarities[k - 1]``
    is the ``p_k x p_k`` matrix of factor ``k``: entry ``[0, j - 1]`` belongs to
    ``Delete(k, j)`` and entry ``[i - 1, j - 1]`` to ``Merge(k, i, j)``.
    """

    continuous: NDArray[np.float64]
    dissimilarities: tuple[NDArray[np.float64], ...]

    def delete(self, k: int, j: int) -> float:
        if k == 0:
            return float(self.continuous[j - 1])
        return float(self.dissimilarities[k - 1][0, j - 1])

    def merge(self, k: int, i: int, j: int) -> float:
        return float(self.dissimilarities[k - 1][i - 1, j - 1])

    def of(self, c: ElementaryConstraint) -> float:
        if isinstance(c, Delete):
            return self.delete(c.k, c.j)
        return self.merge(c.k, c.i, c.j)


def _check_variance(sigma2: float) -> None:
    if not sigma2 > 0:
        raise ZeroVariance(
            "residual variance of the full model is zero; the response is an exact "
            "linear combination of all design columns"
        )


def t_statistics(fit: FullModelFit, layout) -> SquaredStatistics:
    """Squared t-statistics from ``R^-1``, ``z`` and ``sigma2_hat``.

    Deleting parameter ``jk`` scores ``(r_jk' z)^2 / (s2 ||r_jk||^2)`` and
    merging ``ik`` with ``jk`` scores
    ``((r_ik - r_jk)' z)^2 / (s2 ||r_ik - r_jk||^2)``, where ``r_jk`` is the
    row of ``R^-1`` belonging to parameter ``jk``.
    """
    layout = layout_of(layout)
    _check_variance(fit.sigma2_hat)
    Ri, z, s2 = fit.R_inv, fit.z, fit.sigma2_hat

    cont = Ri[1 : layout.p0 + 1]
    continuous = (cont @ z) ** 2 / (s2 * np.einsum("ij,ij->i", cont, cont))

    blocks = []
    for k in range(1, layout.n_factors + 1):
        cols = list(layout.factor_columns(k))
        # Row 0 stands for the reference level, whose coefficient is fixed at 0.
        rows = np.vstack([np.zeros(fit.p), Ri[cols]])
        diff = rows[:, None, :] - rows[None, :, :]
        num = (diff @ z) ** 2
        den = s2 * np.einsum("ijk,ijk->ij", diff, diff)
        D = np.zeros_like(num)
        off = ~np.eye(len(rows), dtype=bool)
        D[off] = num[off] / den[off]
        blocks.append(D)
    return SquaredStatistics(continuous, tuple(blocks))


# ---------------------------------------------------------------------------
# Step 2: agglomerative clustering of factor levels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MergeStep:
    """One agglomeration: clusters ``left`` and ``right`` join at ``height``.

    ``constraint`` ties the minimal level of ``left`` to the minimal level of
    ``right`` (a :class:`Delete` when one side holds the reference level).
    """

    left: tuple[int, ...]
    right: tuple[int, ...]
    height: float
    constraint: ElementaryConstraint


@dataclass(frozen=True)
class DendrogramTrace:
    k: int
    merges: tuple[MergeStep, ...]

    @property
    def heights(self) -> NDArray[np.float64]:
        return np.array([m.height for m in self.merges])


def cluster_factor(dissimilarity: NDArray[np.float64], linkage: float = 0.0, k: int = 1) -> DendrogramTrace:
    """Agglomerative clustering of the levels of factor ``k``.

    After joining clusters ``a`` and ``b`` the distance to any other cluster
    ``o`` becomes ``linkage * min(d(a, o), d(b, o)) + (1 - linkage) * max(...)``:
    ``linkage = 0`` is complete linkage, ``1`` single linkage.  Ties in the
    minimal distance go to the pair of clusters with the smallest minimal
    levels.
    """
    if not 0.0 <= linkage <= 1.0:
        raise InputError(f"linkage must lie in [0, 1], got {linkage}")
    D = np.array(dissimilarity, dtype=float)
    size = D.shape[0]
    clusters: list[tuple[int, ...]] = [(j,) for j in range(1, size + 1)]
    merges = []
    while len(clusters) > 1:
        m = len(clusters)
        best = None
        for a in range(m):
            for b in range(a + 1, m):
                if best is None or D[a, b] < D[best[0], best[1]]:
                    best = (a, b)
        a, b = best
        height = float(D[a, b])
        left, right = clusters[a], clusters[b]
        merges.append(MergeStep(left, right, height, merge(k, left[0], right[0])))

        joined = linkage * np.minimum(D[a], D[b]) + (1.0 - linkage) * np.maximum(D[a], D[b])
        D[a, :] = joined
        D[:, a] = joined
        D[a, a] = 0.0
        D = np.delete(np.delete(D, b, axis=0), b, axis=1)
        clusters[a] = tuple(sorted(left + right))
        del clusters[b]
    return DendrogramTrace(k, tuple(merges))


# ---------------------------------------------------------------------------
# Step 3: ordering constraints by cutting height
# ---------------------------------------------------------------------------


def assemble_path(
    stats: SquaredStatistics, dendrograms: Sequence[DendrogramTrace]
) -> tuple[NDArray[np.float64], list[ElementaryConstraint]]:
    """Sorted cutting heights ``h`` (length ``p``, ``h[0] = 0`` for the full
    model) and the ``p - 1`` constraints in matching order.

    Ties are broken by block index, then by position in the block: the
    variable index for continuous deletions and the agglomeration step for
    factor merges, so every prefix of a factor's constraints is a state of
    its dendrogram.
    """
    entries = [
        (float(h), 0, j, Delete(0, j)) for j, h in enumerate(stats.continuous, start=1)
    ]
    for tree in dendrograms:
        entries.extend((m.height, tree.k, s, m.constraint) for s, m in enumerate(tree.merges))
    entries.sort(key=lambda e: e[:3])
    heights = np.array([0.0] + [e[0] for e in entries])
    return heights, [e[3] for e in entries]


# ---------------------------------------------------------------------------
# Step 4: RSS along the nested path
# ---------------------------------------------------------------------------


def rss_path(
    fit: FullModelFit,
    constraints: Sequence[ElementaryConstraint] | NDArray[np.float64],
    layout=None,
    steps: int | None = None,
) -> NDArray[np.float64]:
    """RSS of the nested models ``M_0 ⊃ M_1 ⊃ ...``.

    Model ``m`` imposes the first ``m`` constraints (or rows of a constraint
    matrix ``C``).  With the QR factorization ``R^-T C^T = W U``,
    ``RSS_m = RSS_{m-1} + (w_m' z)^2`` where ``w_m`` is column ``m`` of ``W``.  ``steps``
    limits the computation to the first ``steps`` constraints; the QR of a
    column prefix is the prefix of the QR, so the values are unchanged.
    """
    if isinstance(constraints, np.ndarray):
        rows = np.atleast_2d(constraints)
        if rows.shape[1] != fit.p:
            raise InputError(f"constraint matrix has {rows.shape[1]} columns, expected {fit.p}")
    else:
        rows = constraint_matrix(list(constraints), layout)
    if steps is not None:
        rows = rows[:steps]
    rss = np.empty(rows.shape[0] + 1)
    rss[0] = fit.rss
    if rows.shape[0] == 0:
        return rss
    S = fit.R_inv.T @ rows.T
    W, U = np.linalg.qr(S)
    d = np.abs(np.diag(U))
    scale = np.linalg.norm(S, axis=0).max()
    if (d <= RANK_TOL * scale).any():
        raise DegenerateConstraints(
            f"constraint rows {np.flatnonzero(d <= RANK_TOL * scale).tolist()} are "
            "linearly dependent on earlier rows"
        )
    rss[1:] = fit.rss + np.cumsum((W.T @ fit.z) ** 2)
    return rss


# ---------------------------------------------------------------------------
# Step 5: information criterion
# ---------------------------------------------------------------------------


def resolve_penalty(penalty, n: int) -> tuple[str, float]:
    """Map ``"bic"``, ``"aic"`` or a number to ``(name, per-parameter penalty)``."""
    if isinstance(penalty, str):
        key = penalty.lower()
        if key == "bic":
            return "bic", math.log(n)
        if key == "aic":
            return "aic", 2.0
        try:
            penalty = float(penalty)
        except ValueError:
            raise InputError(f"unknown penalty {penalty!r}") from None
    value = float(penalty)
    if not (value >= 0 and math.isfinite(value)):
        raise InputError(f"penalty must be a finite non-negative number, got {penalty!r}")
    return "gic", value


def gaussian_gic(rss, n: int, sizes, penalty: float) -> NDArray[np.float64]:
    """``-2 log L + penalty * (size + 1)`` of a normal linear model with ML
    variance.

    Equals ``n log RSS + penalty * size`` plus ``n log(2 pi / n) + n + penalty``, a
    constant over models, so both forms select the same model.
    """
    rss = np.asarray(rss, dtype=float)
    if (rss <= 0).any():
        raise ZeroRSS("a model on the path fits the response exactly (RSS = 0)")
    sizes = np.asarray(sizes, dtype=float)
    return n * (np.log(rss) + LOG_2PI - math.log(n) + 1.0) + penalty * (sizes + 1.0)


def argmin_prefer_smaller(values: NDArray[np.float64]) -> int:
    """Index of the minimum; ties go to the largest index (smallest model)."""
    values = np.asarray(values, dtype=float)
    best = np.min(values)
    return int(np.flatnonzero(values == best)[-1])


def gic_select(path: NestedPath | NDArray[np.float64], penalty: float, n: int) -> int:
    """Index ``m*`` minimizing ``n log RSS_m + (p - m) * penalty`` on the path."""
    rss = path.rss if isinstance(path, NestedPath) else np.asarray(path, dtype=float)
    if (rss <= 0).any():
        raise ZeroRSS("a model on the path fits the response exactly (RSS = 0)")
    p = rss.shape[0]
    return argmin_prefer_smaller(n * np.log(rss) + (p - np.arange(p)) * penalty)


# ---------------------------------------------------------------------------
# Results and the full procedure
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NestedPath:
    """The nested family ``M_0 ⊃ ... ⊃ M_{p-1}``.

    ``rss`` is set for linear models and ``deviance`` for generalized linear
    models; ``gic`` is ``-2 log L + penalty * (number of parameters)``.
    Entries of ``gic`` are ``inf`` where a refit failed.
    """

    heights: NDArray[np.float64]
    constraints: tuple[ElementaryConstraint, ...]
    gic: NDArray[np.float64]
    sizes: NDArray[np.int_]
    rss: NDArray[np.float64] | None = None
    deviance: NDArray[np.float64] | None = None
    failed: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.heights)

    def model(self, m: int, layout) -> FeasibleModel:
        """Feasible model after imposing the first ``m`` constraints."""
        return constraints_to_model(self.constraints[:m], layout)


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Selected model with its constrained estimate and path diagnostics."""

    model: FeasibleModel
    beta: NDArray[np.float64]
    path: NestedPath
    dendrograms: tuple[DendrogramTrace, ...]
    criterion: str
    penalty: float
    index: int
    family: str = "gaussian"
    statistics: SquaredStatistics | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.model.size


def nested_models(constraints: Sequence[ElementaryConstraint], layout) -> list[FeasibleModel]:
    """``[M_0, M_1, ...]`` for every prefix of ``constraints``."""
    return [constraints_to_model(constraints[:m], layout) for m in range(len(constraints) + 1)]


def build_path(stats: SquaredStatistics, layout: DesignLayout, linkage: float):
    dendrograms = tuple(
        cluster_factor(D, linkage, k) for k, D in enumerate(stats.dissimilarities, start=1)
    )
    heights, constraints = assemble_path(stats, dendrograms)
    return heights, constraints, dendrograms


def dmr(
    X: DesignMatrix,
    y,
    *,
    linkage: float = 0.0,
    penalty="bic",
    fit: FullModelFit | None = None,
) -> SelectionResult:
    """Select a linear model by deleting variables and merging factor levels.

    Parameters
    ----------
    X : DesignMatrix
        Full-rank design built by :func:`~dmr.model_matrix.build_design_matrix`.
    y : array-like, shape (n,)
        Response.
    linkage : float in [0, 1]
        Weight of the minimum in the cluster-distance update; 0 gives
        complete linkage.
    penalty : "bic", "aic" or float
        Per-parameter penalty of the information criterion.
    fit : FullModelFit, optional
        Precomputed full-model fit of ``(X, y)``.

    Returns
    -------
    SelectionResult
    """
    y = np.asarray(y, dtype=float)
    if fit is None:
        fit = fit_full_model(X, y)
    layout = X.layout
    name, weight = resolve_penalty(penalty, fit.n)

    stats = t_statistics(fit, layout)
    heights, constraints, dendrograms = build_path(stats, layout, linkage)
    rss = rss_path(fit, constraints, layout)
    sizes = fit.p - np.arange(fit.p)
    gic = gaussian_gic(rss, fit.n, sizes, weight)
    path = NestedPath(heights, tuple(constraints), gic, sizes, rss=rss)

    best = argmin_prefer_smaller(gic)
    model = path.model(best, layout)
    beta, _ = constrained_fit(X, y, model)
    return SelectionResult(
        model=model,
        beta=beta,
        path=path,
        dendrograms=dendrograms,
        criterion=name,
        penalty=weight,
        index=best,
        statistics=stats,
    )
