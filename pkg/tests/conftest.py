"""Shared fixtures: the small worked example and random instance builders."""

import itertools

import numpy as np
import pytest

from dmr.constraints import FeasibleModel
from dmr.model_matrix import DesignLayout, DesignMatrix

# Worked example: one continuous variable and a 4-level factor, two rows per level.
EXAMPLE_X0 = np.array([-0.96, -0.29, 0.26, -1.15, 0.20, 0.03, 0.09, 1.12])
EXAMPLE_EPS = np.array([-1.22, 1.27, -0.74, -1.13, -0.72, 0.25, 0.15, -0.31])
EXAMPLE_BETA = np.array([1.0, 2.0, -2.0, -2.0, 0.0])
EXAMPLE_LEVELS = ("A", "B", "C", "D")


def example_design() -> DesignMatrix:
    dummies = np.zeros((8, 3))
    dummies[2:4, 0] = 1
    dummies[4:6, 1] = 1
    dummies[6:8, 2] = 1
    values = np.column_stack([np.ones(8), EXAMPLE_X0, dummies])
    return DesignMatrix(
        values,
        DesignLayout(1, (4,)),
        continuous_names=("x0",),
        factor_names=("factor1",),
        factor_levels=(EXAMPLE_LEVELS,),
    )


@pytest.fixture
def example():
    X = example_design()
    y = X.values @ EXAMPLE_BETA + EXAMPLE_EPS
    return X, y


def example_csv_text() -> str:
    X = example_design()
    y = X.values @ EXAMPLE_BETA + EXAMPLE_EPS
    labels = [lvl for lvl in EXAMPLE_LEVELS for _ in range(2)]
    lines = ["y,x0,factor1"]
    lines += [f"{float(yi)!r},{float(x)!r},{lab}" for yi, x, lab in zip(y, EXAMPLE_X0, labels)]
    return "\n".join(lines) + "\n"


def random_design(rng, n, p0, level_counts) -> DesignMatrix:
    """Gaussian continuous columns plus factors with every level present."""
    layout = DesignLayout(p0, tuple(level_counts))
    blocks = [np.ones((n, 1)), rng.standard_normal((n, p0))]
    for L in level_counts:
        codes = np.concatenate([np.arange(L), rng.integers(0, L, n - L)])
        rng.shuffle(codes)
        blocks.append((codes[:, None] == np.arange(1, L)).astype(float))
    return DesignMatrix(np.hstack(blocks), layout)


def random_partition(rng, L):
    labels = rng.integers(0, rng.integers(1, L + 1), L)
    groups = {}
    for j, lab in enumerate(labels, start=1):
        groups.setdefault(lab, []).append(j)
    return tuple(tuple(g) for g in groups.values())


def random_model(rng, layout) -> FeasibleModel:
    retained = tuple(j for j in range(1, layout.p0 + 1) if rng.random() < 0.5)
    parts = tuple(random_partition(rng, L) for L in layout.level_counts)
    return FeasibleModel(layout, retained, parts)


def set_partitions(items):
    """All partitions of ``items`` (Bell-number many)."""
    items = list(items)
    if not items:
        yield ()
        return
    head, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + ((head,) + part[i],) + part[i + 1 :]
        yield ((head,),) + part


def all_models(layout):
    """Every feasible model of ``layout``."""
    subsets = itertools.chain.from_iterable(
        itertools.combinations(range(1, layout.p0 + 1), r) for r in range(layout.p0 + 1)
    )
    subsets = list(subsets)
    factor_parts = [list(set_partitions(range(1, L + 1))) for L in layout.level_counts]
    for retained in subsets:
        for parts in itertools.product(*factor_parts):
            yield FeasibleModel(layout, retained, parts)


def projection(A):
    """Orthogonal projector onto the column space of ``A`` via the pseudo-inverse."""
    return A @ np.linalg.pinv(A)


def is_separated(stats, model) -> bool:
    """All constraints the model satisfies score below all it violates."""
    layout = model.layout
    true, false = [], []
    for j in range(1, layout.p0 + 1):
        (false if j in model.retained else true).append(stats.continuous[j - 1])
    for k, P in enumerate(model.partitions, start=1):
        label = {j: c for c, cluster in enumerate(P) for j in cluster}
        D = stats.dissimilarities[k - 1]
        for i in range(1, layout.levels(k) + 1):
            for j in range(i + 1, layout.levels(k) + 1):
                (true if label[i] == label[j] else false).append(D[i - 1, j - 1])
    if not true or not false:
        return True
    return max(true) < min(false)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
