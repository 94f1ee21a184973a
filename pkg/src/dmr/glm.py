"""Delete-or-merge selection for generalized linear models.

The squared t-statistics of the linear procedure are replaced by squared
Wald statistics of a maximum-likelihood fit, and the RSS recursion by one
constrained refit per path model.  The criterion is
``-2 log L + penalty * (number of parameters)``: the deviance plus the
penalty times the model size for binary logistic regression.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_triangular
from scipy.special import expit, log_expit

from .constraints import expand_coefficients, reduced_design
from .core import (
    NestedPath,
    SelectionResult,
    SquaredStatistics,
    argmin_prefer_smaller,
    build_path,
    gaussian_gic,
    nested_models,
    resolve_penalty,
)
from .errors import InputError, NumericalError, SeparationWarning, TooFewRows, ZeroVariance
from .model_matrix import DesignMatrix, fit_full_model, layout_of, positive_qr

FAMILIES = ("binomial", "gaussian")

#: Fitted probabilities closer than this to 0 or 1 flag (quasi-)separation.
SATURATION = 1e-8


@dataclass(frozen=True, eq=False)
class GlmFit:
    beta_hat: NDArray[np.float64]
    cov: NDArray[np.float64]
    deviance: float
    n: int
    p: int
    converged: bool
    iterations: int
    separation: bool = False
    family: str = "binomial"


def _values(X) -> NDArray[np.float64]:
    return X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)


def binomial_deviance(y: NDArray[np.float64], eta: NDArray[np.float64]) -> float:
    """``-2 log L`` of binary responses under the logit link."""
    return float(-2.0 * np.sum(y * log_expit(eta) + (1.0 - y) * log_expit(-eta)))


def _gaussian_fit(A: NDArray[np.float64], y: NDArray[np.float64]) -> GlmFit:
    fit = fit_full_model(A, y)
    return GlmFit(
        beta_hat=fit.beta_hat,
        cov=fit.sigma2_hat * (fit.R_inv @ fit.R_inv.T),
        deviance=fit.rss,
        n=fit.n,
        p=fit.p,
        converged=True,
        iterations=1,
        family="gaussian",
    )


def irls_fit(X, y, max_iter: int = 25, tol: float = 1e-8, family: str = "binomial") -> GlmFit:
    """Maximum-likelihood fit by iteratively reweighted least squares.

    Iteration stops when ``|dev - dev_old| / (|dev| + 0.1) < tol``.  A fit
    that does not converge, or whose fitted probabilities reach 0 or 1, is
    returned with its flags set and a :class:`SeparationWarning`.  The
    covariance is the inverse Fisher information at the returned estimate.
    """
    if family not in FAMILIES:
        raise InputError(f"unsupported family {family!r}")
    A = _values(X)
    y = np.asarray(y, dtype=float)
    n, p = A.shape
    if y.shape != (n,):
        raise InputError(f"response has shape {y.shape}, expected ({n},)")
    if n <= p:
        raise TooFewRows(n, p)
    if family == "gaussian":
        return _gaussian_fit(A, y)
    if not np.isin(y, (0.0, 1.0)).all():
        raise InputError("binomial responses must be 0 or 1")

    names = X.column_names if isinstance(X, DesignMatrix) else None
    eta = np.log((y + 0.5) / (1.5 - y))
    dev_old = binomial_deviance(y, eta)
    converged = False
    it = 0
    beta = np.zeros(p)
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        w = np.maximum(mu * (1.0 - mu), 1e-300)
        sw = np.sqrt(w)
        Q, R = positive_qr(A * sw[:, None], names=names)
        beta = solve_triangular(R, Q.T @ (sw * (eta + (y - mu) / w)))
        eta = A @ beta
        dev = binomial_deviance(y, eta)
        if abs(dev - dev_old) / (abs(dev) + 0.1) < tol:
            converged = True
            break
        dev_old = dev

    mu = expit(eta)
    separation = bool(np.any((mu < SATURATION) | (mu > 1.0 - SATURATION)))
    if not converged or separation:
        warnings.warn(
            "logistic fit " + ("did not converge" if not converged else "has fitted probabilities of 0 or 1"),
            SeparationWarning,
            stacklevel=2,
        )
    # Information matrix at the final estimate, not at the last working weights.
    w = np.maximum(mu * (1.0 - mu), 1e-300)
    _, R = positive_qr(A * np.sqrt(w)[:, None], names=names)
    R_inv = solve_triangular(R, np.eye(p))
    return GlmFit(
        beta_hat=beta,
        cov=R_inv @ R_inv.T,
        deviance=dev,
        n=n,
        p=p,
        converged=converged,
        iterations=it,
        separation=separation,
    )


def wald_statistics(fit: GlmFit, layout) -> SquaredStatistics:
    """Squared Wald statistics in the layout of :func:`~dmr.core.t_statistics`.

    Deleting ``jk`` scores ``b_jk^2 / V[jk, jk]``; merging ``ik`` with ``jk``
    scores ``(b_ik - b_jk)^2 / (V[ik, ik] + V[jk, jk] - 2 V[ik, jk])``.
    """
    layout = layout_of(layout)
    b, V = fit.beta_hat, fit.cov
    tiny = np.finfo(float).tiny

    def ratio(num, den):
        if np.any(~(den > tiny)):
            raise ZeroVariance("estimated variance of a coefficient contrast is zero")
        return num / den

    cont = np.arange(1, layout.p0 + 1)
    continuous = ratio(b[cont] ** 2, np.diag(V)[cont])

    blocks = []
    for k in range(1, layout.n_factors + 1):
        cols = list(layout.factor_columns(k))
        bk = np.concatenate([[0.0], b[cols]])
        Vk = np.zeros((len(cols) + 1, len(cols) + 1))
        Vk[1:, 1:] = V[np.ix_(cols, cols)]
        dv = np.diag(Vk)
        num = (bk[:, None] - bk[None, :]) ** 2
        den = dv[:, None] + dv[None, :] - 2.0 * Vk
        D = np.zeros_like(num)
        off = ~np.eye(len(bk), dtype=bool)
        D[off] = ratio(num[off], den[off])
        blocks.append(D)
    return SquaredStatistics(continuous, tuple(blocks))


def dmr_glm(
    X: DesignMatrix,
    y,
    family: str = "binomial",
    *,
    linkage: float = 0.0,
    penalty="bic",
    max_iter: int = 25,
    tol: float = 1e-8,
) -> SelectionResult:
    """Delete-or-merge selection for a binomial (logit) or gaussian GLM.

    Path models whose refit does not converge get an infinite criterion and
    are listed in ``result.path.failed``.
    """
    y = np.asarray(y, dtype=float)
    layout = X.layout
    name, weight = resolve_penalty(penalty, X.n)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SeparationWarning)
        full = irls_fit(X, y, max_iter=max_iter, tol=tol, family=family)
    stats = wald_statistics(full, layout)
    heights, constraints, dendrograms = build_path(stats, layout, linkage)
    models = nested_models(constraints, layout)

    p = X.p
    sizes = p - np.arange(p)
    loss = np.empty(p)
    gic = np.empty(p)
    coefs = []
    failed = []
    for m, model in enumerate(models):
        if m == 0:
            refit = full
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SeparationWarning)
                refit = irls_fit(
                    reduced_design(X, model.system), y, max_iter=max_iter, tol=tol, family=family
                )
        coefs.append(refit.beta_hat)
        loss[m] = refit.deviance
        if not refit.converged:
            failed.append(m)
            gic[m] = math.inf
        elif family == "gaussian":
            gic[m] = gaussian_gic(loss[m], X.n, model.size, weight)
        else:
            gic[m] = loss[m] + weight * model.size

    if len(failed) == p:
        raise NumericalError("no model on the path could be fitted")
    best = argmin_prefer_smaller(gic)
    model = models[best]
    beta = expand_coefficients(model.system, coefs[best])
    path = NestedPath(
        heights,
        tuple(constraints),
        gic,
        sizes,
        rss=loss if family == "gaussian" else None,
        deviance=loss if family == "binomial" else None,
        failed=tuple(failed),
    )
    return SelectionResult(
        model=model,
        beta=beta,
        path=path,
        dendrograms=dendrograms,
        criterion=name,
        penalty=weight,
        index=best,
        family=family,
        statistics=stats,
    )
