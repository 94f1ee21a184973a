"""Selection-accuracy measures, simulation designs and a Monte Carlo harness.

Random numbers come from numpy's PCG64 generator.  A run seeded with ``seed``
spawns one independent child stream per replication from
``np.random.SeedSequence(seed)``, so results do not depend on the number of
worker processes or the order in which replications finish.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property, partial

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import cholesky, toeplitz
from scipy.special import expit

from .constraints import FeasibleModel, model_intersection_dim
from .core import SelectionResult, dmr
from .errors import DMRError, InputError
from .glm import dmr_glm
from .model_matrix import DesignLayout, DesignMatrix, dummy_block


# ---------------------------------------------------------------------------
# Performance measures
# ---------------------------------------------------------------------------


def accepted_constraints(model: FeasibleModel) -> set[tuple[int, ...]]:
    """Every elementary constraint satisfied by ``model``.

    ``(k, i, j)`` with ``i < j`` for two levels in one cluster (``i = 1`` is a
    zero coefficient of level ``j``), ``(0, j)`` for a deleted continuous
    variable.
    """
    out = {(0, j) for j in model.deleted}
    for k, P in enumerate(model.partitions, start=1):
        for cluster in P:
            out.update((k, i, j) for i, j in itertools.combinations(cluster, 2))
    return out


def elementary_rates(true: FeasibleModel, selected: FeasibleModel) -> tuple[float, float]:
    """``(TPR, FDR)`` over sets of accepted elementary constraints.

    TPR is 1 when the true model accepts no constraint; FDR is 0 when the
    selected model accepts none.
    """
    B = accepted_constraints(true)
    B_hat = accepted_constraints(selected)
    hit = len(B & B_hat)
    tpr = hit / len(B) if B else 1.0
    fdr = 1.0 - hit / len(B_hat) if B_hat else 0.0
    return tpr, fdr


def difference_rates(true: FeasibleModel, selected: FeasibleModel) -> tuple[float, float]:
    """``(TPR, FDR)`` over elementary differences that are *not* constrained.

    The complement view of :func:`elementary_rates`: positives are the
    coefficient differences (and continuous effects) a model keeps nonzero.
    TPR is 1 when the true model keeps none; FDR is 0 when the selected one
    keeps none.
    """
    layout = true.layout
    universe = {(0, j) for j in range(1, layout.p0 + 1)}
    for k, L in enumerate(layout.level_counts, start=1):
        universe.update((k, i, j) for i, j in itertools.combinations(range(1, L + 1), 2))
    B = universe - accepted_constraints(true)
    B_hat = universe - accepted_constraints(selected)
    hit = len(B & B_hat)
    tpr = hit / len(B) if B else 1.0
    fdr = 1.0 - hit / len(B_hat) if B_hat else 0.0
    return tpr, fdr


def star_rates(true: FeasibleModel, selected: FeasibleModel) -> tuple[float, float]:
    """``(TPR*, FDR*)`` from the dimension of the intersection of the models."""
    common = model_intersection_dim(true, selected)
    return common / true.size, 1.0 - common / selected.size


def correct_factors(true: FeasibleModel, selected: FeasibleModel) -> bool:
    """True when every factor without effect is merged into one cluster and
    every factor with an effect keeps at least two clusters."""
    for P_true, P_sel in zip(true.partitions, selected.partitions):
        if (len(P_true) == 1) != (len(P_sel) == 1):
            return False
    return True


# ---------------------------------------------------------------------------
# Simulation designs
# ---------------------------------------------------------------------------

_EXP1_FACTOR = (0.0, -3.0, -3.0, -3.0, -3.0, -2.0, -2.0)
_EXP2_CONTINUOUS = (1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0)
_EXP2_FACTOR = (0.0, -2.0, -2.0, -2.0, -2.0, 4.0, 4.0)
_SIGNAL_PARTITION = ((1, 2), (3, 4, 5, 6), (7, 8))
_AR_RHO = 0.8


@dataclass(frozen=True)
class ExperimentSpec:
    """One of the three simulation settings, replicated ``c`` times.

    1. Three factors with 8, 4 and 3 levels, balanced with ``c`` rows per
       level combination; only the first factor has an effect
       (partition ``{1,2} {3,4,5,6} {7,8}``), unit-variance normal errors.
    2. One 8-level factor with the same true partition and 8 continuous
       variables with AR(0.8) correlation whose means follow the partition;
       the odd-numbered continuous variables have unit effects.
    3. The design of experiment 1 with a Bernoulli response on the logit scale.
    """

    id: int
    c: int = 1

    def __post_init__(self):
        if self.id not in (1, 2, 3):
            raise InputError(f"experiment id must be 1, 2 or 3, got {self.id}")
        if self.c < 1:
            raise InputError(f"replication multiplier c must be >= 1, got {self.c}")

    @property
    def n(self) -> int:
        return (128 if self.id == 2 else 96) * self.c

    @property
    def family(self) -> str:
        return "binomial" if self.id == 3 else "gaussian"

    @property
    def layout(self) -> DesignLayout:
        if self.id == 2:
            return DesignLayout(8, (8,))
        return DesignLayout(0, (8, 4, 3))

    @cached_property
    def true_model(self) -> FeasibleModel:
        if self.id == 2:
            return FeasibleModel(self.layout, (1, 3, 5, 7), (_SIGNAL_PARTITION,))
        return FeasibleModel(self.layout, (), (_SIGNAL_PARTITION, ((1, 2, 3, 4),), ((1, 2, 3),)))

    @cached_property
    def beta(self) -> NDArray[np.float64]:
        if self.id == 2:
            return np.array([0.0, *_EXP2_CONTINUOUS, *_EXP2_FACTOR])
        return np.array([2.0, *_EXP1_FACTOR, 0, 0, 0, 0, 0])

    @property
    def reports_cf(self) -> bool:
        return self.id != 2


@dataclass(frozen=True, eq=False)
class ExperimentData:
    X: DesignMatrix
    y: NDArray[np.float64]
    y_new: NDArray[np.float64]
    mu: NDArray[np.float64]


def _factorial_design(c: int) -> DesignMatrix:
    combos = np.array(list(itertools.product(range(8), range(4), range(3))))
    codes = np.repeat(combos, c, axis=0)
    blocks = [np.ones((codes.shape[0], 1))]
    blocks += [dummy_block(codes[:, i], m) for i, m in enumerate((8, 4, 3))]
    return DesignMatrix(np.hstack(blocks), DesignLayout(0, (8, 4, 3)))


def _correlated_design(c: int, rng: np.random.Generator) -> DesignMatrix:
    per_level = 16 * c
    codes = np.repeat(np.arange(8), per_level)
    means = np.zeros((codes.shape[0], 8))
    means[codes <= 1, 0:2] = 1.0
    means[(codes >= 2) & (codes <= 5), 2:6] = 1.0
    means[codes >= 6, 6:8] = 1.0
    L = cholesky(toeplitz(_AR_RHO ** np.arange(8)), lower=True)
    V0 = means + rng.standard_normal(means.shape) @ L.T
    values = np.hstack([np.ones((codes.shape[0], 1)), V0, dummy_block(codes, 8)])
    return DesignMatrix(values, DesignLayout(8, (8,)))


def _draw_response(mu: NDArray[np.float64], family: str, rng: np.random.Generator):
    if family == "binomial":
        return (rng.random(mu.shape[0]) < expit(mu)).astype(float)
    return mu + rng.standard_normal(mu.shape[0])


def generate_experiment(spec: ExperimentSpec, seed) -> ExperimentData:
    """Draw one data set; ``seed`` is anything ``np.random.default_rng`` takes.

    ``y_new`` is an independent response on the same design, used for the
    prediction error.
    """
    rng = np.random.default_rng(seed)
    X = _correlated_design(spec.c, rng) if spec.id == 2 else _factorial_design(spec.c)
    mu = X.values @ spec.beta
    y = _draw_response(mu, spec.family, rng)
    y_new = _draw_response(mu, spec.family, rng)
    return ExperimentData(X, y, y_new, mu)


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------

Selector = Callable[[DesignMatrix, NDArray[np.float64]], SelectionResult]


def dmr_selector(X: DesignMatrix, y, linkage: float = 0.0, penalty="bic") -> SelectionResult:
    return dmr(X, y, linkage=linkage, penalty=penalty)


def dmr_glm_selector(X: DesignMatrix, y, linkage: float = 0.0, penalty="bic") -> SelectionResult:
    return dmr_glm(X, y, "binomial", linkage=linkage, penalty=penalty)


def default_selector(spec: ExperimentSpec, linkage: float = 0.0, penalty="bic") -> Selector:
    fn = dmr_glm_selector if spec.family == "binomial" else dmr_selector
    return partial(fn, linkage=linkage, penalty=penalty)


@dataclass(frozen=True)
class Replication:
    index: int
    true_model: bool
    correct_factors: bool
    tpr: float
    fdr: float
    tpr_star: float
    fdr_star: float
    msep: float
    size: int


def prediction_error(X: DesignMatrix, beta, y_new, family: str) -> float:
    eta = X.values @ beta
    pred = expit(eta) if family == "binomial" else eta
    return float(np.mean((y_new - pred) ** 2))


def run_replication(spec: ExperimentSpec, selector: Selector, seed, index: int = 0):
    """One simulated data set scored against the truth; a
    :class:`~dmr.errors.DMRError` in the selector is returned, not raised."""
    data = generate_experiment(spec, seed)
    try:
        result = selector(data.X, data.y)
    except DMRError as exc:
        return exc
    T, T_hat = spec.true_model, result.model
    tpr, fdr = elementary_rates(T, T_hat)
    tpr_s, fdr_s = star_rates(T, T_hat)
    return Replication(
        index=index,
        true_model=T_hat == T,
        correct_factors=correct_factors(T, T_hat),
        tpr=tpr,
        fdr=fdr,
        tpr_star=tpr_s,
        fdr_star=fdr_s,
        msep=prediction_error(data.X, result.beta, data.y_new, spec.family),
        size=T_hat.size,
    )


@dataclass(frozen=True)
class SelectorMetrics:
    """Averages over the successful replications of one simulation run."""

    experiment: int
    n: int
    selector: str
    tm: float
    cf: float | None
    tpr: float
    fdr: float
    tpr_star: float
    fdr_star: float
    msep_mean: float
    msep_sd: float
    md_mean: float
    md_sd: float
    failures: int
    reps: int
    seconds: float = 0.0

    CSV_COLUMNS = (
        "experiment", "n", "selector", "tm", "cf", "tpr", "fdr", "tpr_star",
        "fdr_star", "msep_mean", "msep_sd", "md_mean", "md_sd", "failures",
    )

    def csv_row(self) -> list[str]:
        out = []
        for name in self.CSV_COLUMNS:
            value = getattr(self, name)
            if value is None:
                out.append("")
            elif isinstance(value, float):
                out.append(format(value, ".17g"))
            else:
                out.append(str(value))
        return out


def aggregate(
    spec: ExperimentSpec, outcomes: Sequence, selector_name: str, seconds: float = 0.0
) -> SelectorMetrics:
    ok = sorted((o for o in outcomes if isinstance(o, Replication)), key=lambda o: o.index)
    failures = len(outcomes) - len(ok)
    if not ok:
        nan = math.nan
        return SelectorMetrics(
            spec.id, spec.n, selector_name, nan, None, nan, nan, nan, nan, nan, nan, nan, nan,
            failures, len(outcomes), seconds,
        )
    ddof = 1 if len(ok) > 1 else 0
    msep = np.array([o.msep for o in ok])
    size = np.array([o.size for o in ok], dtype=float)

    def mean(attr):
        return float(np.mean([getattr(o, attr) for o in ok]))

    return SelectorMetrics(
        experiment=spec.id,
        n=spec.n,
        selector=selector_name,
        tm=mean("true_model"),
        cf=mean("correct_factors") if spec.reports_cf else None,
        tpr=mean("tpr"),
        fdr=mean("fdr"),
        tpr_star=mean("tpr_star"),
        fdr_star=mean("fdr_star"),
        msep_mean=float(msep.mean()),
        msep_sd=float(msep.std(ddof=ddof)),
        md_mean=float(size.mean()),
        md_sd=float(size.std(ddof=ddof)),
        failures=failures,
        reps=len(outcomes),
        seconds=seconds,
    )


def run_monte_carlo(
    spec: ExperimentSpec,
    selector: Selector | None = None,
    reps: int = 100,
    seed: int = 0,
    *,
    workers: int = 1,
    selector_name: str | None = None,
) -> SelectorMetrics:
    """Repeat data generation and selection ``reps`` times.

    ``selector`` defaults to the linear procedure (the logistic one for
    experiment 3).  With ``workers > 1`` replications run in worker
    processes, so ``selector`` must be picklable; results are identical to a
    serial run.
    """
    if reps < 1:
        raise InputError(f"reps must be >= 1, got {reps}")
    if selector is None:
        selector = default_selector(spec)
        selector_name = selector_name or ("DMR4glm" if spec.family == "binomial" else "DMR")
    if selector_name is None:
        selector_name = getattr(selector, "__name__", type(selector).__name__)
    seeds = np.random.SeedSequence(seed).spawn(reps)
    job = partial(run_replication, spec, selector)
    start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, seeds, range(reps), chunksize=max(1, reps // (4 * workers))))
    else:
        outcomes = [job(s, i) for i, s in enumerate(seeds)]
    return aggregate(spec, outcomes, selector_name, time.perf_counter() - start)


def write_metrics_csv(rows: Sequence[SelectorMetrics], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SelectorMetrics.CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.csv_row())
