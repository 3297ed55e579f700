"""(mu/mu_w, lambda)-CMA-ES with an explicit ask/tell interface.

The update is the standard one from Hansen's tutorial: weighted recombination
of the best ``mu`` offspring, cumulation of the two evolution paths, rank-one
plus rank-mu covariance adaptation, and cumulative step-size adaptation.
Fitness is minimized.  An offspring with fitness ``+inf`` is infeasible and
is never selected.

State is a plain dataclass; :func:`es_tell` returns a new state rather than
mutating its argument, so a caller can keep any earlier generation around.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np


class CovarianceError(np.linalg.LinAlgError):
    """Covariance matrix is not numerically positive-definite."""

    def __init__(self, eigenvalue: float):
        super().__init__(f"covariance has non-positive eigenvalue {eigenvalue:.6g}; call es_repair")
        self.eigenvalue = eigenvalue


class GenerationInfeasible(RuntimeError):
    """Fewer than ``mu`` offspring of a generation have finite fitness."""


@dataclass(frozen=True)
class ScoredCandidate:
    point: np.ndarray
    fitness: float


@dataclass(frozen=True, eq=False)
class EsState:
    dim: int
    mean: np.ndarray
    cov: np.ndarray
    sigma: float
    path_sigma: np.ndarray
    path_cov: np.ndarray
    lam: int
    mu: int
    weights: np.ndarray
    generation: int = 0
    eval_count: int = 0
    # (cov, eigvals, eigvecs); reused only while ``cov`` is the same object
    _eig: tuple | None = field(default=None, repr=False)

    @property
    def mueff(self) -> float:
        return 1.0 / float(np.sum(self.weights ** 2))

    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        if self._eig is not None and self._eig[0] is self.cov:
            return self._eig[1], self._eig[2]
        return _eigh(self.cov)


def default_lambda(dim: int) -> int:
    return 4 + int(math.floor(3 * math.log(dim)))


def log_rank_weights(mu: int) -> np.ndarray:
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    return w / w.sum()


@dataclass(frozen=True)
class StrategyConstants:
    cs: float
    ds: float
    cc: float
    c1: float
    cmu: float
    chi_n: float

    @classmethod
    def for_state(cls, dim: int, mueff: float) -> StrategyConstants:
        n = dim
        cs = (mueff + 2) / (n + mueff + 5)
        ds = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
        cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
        c1 = 2 / ((n + 1.3) ** 2 + mueff)
        cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
        chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n ** 2))
        return cls(cs, ds, cc, c1, cmu, chi_n)


def _eigh(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] <= 0 or not np.all(np.isfinite(vals)):
        raise CovarianceError(float(vals[0]))
    return vals, vecs


def es_init(x_init: Sequence[float], sigma0: float, lambda_override: int | None = None,
            seed: int | None = None) -> EsState:
    """Fresh state centred on ``x_init`` with identity covariance.

    ``seed`` is accepted for call-site symmetry with the rest of the toolkit;
    all sampling randomness flows through the generator passed to
    :func:`es_ask`.
    """
    x = np.array(x_init, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("x_init must be non-empty")
    if not np.all(np.isfinite(x)):
        raise ValueError("x_init contains non-finite entries")
    if not (sigma0 > 0 and math.isfinite(sigma0)):
        raise ValueError(f"sigma0 must be a positive finite number, got {sigma0}")
    n = x.size
    lam = default_lambda(n) if lambda_override is None else int(lambda_override)
    if lam < 2:
        raise ValueError("lambda must be >= 2")
    mu = lam // 2
    cov = np.eye(n)
    return EsState(
        dim=n, mean=x, cov=cov, sigma=float(sigma0),
        path_sigma=np.zeros(n), path_cov=np.zeros(n),
        lam=lam, mu=mu, weights=log_rank_weights(mu),
        _eig=(cov, np.ones(n), np.eye(n)),
    )


def es_ask(state: EsState, rng: np.random.Generator) -> np.ndarray:
    """Sample ``lam`` offspring from N(mean, sigma^2 C); returns shape ``(lam, dim)``."""
    vals, vecs = state.eig()
    z = rng.standard_normal((state.lam, state.dim))
    return state.mean + state.sigma * (z * np.sqrt(vals)) @ vecs.T


def es_tell(state: EsState, ranked: Sequence[ScoredCandidate]) -> EsState:
    """One CMA-ES update from offspring sorted by ascending fitness."""
    if len(ranked) != state.lam:
        raise ValueError(f"expected {state.lam} candidates, got {len(ranked)}")
    fit = np.array([c.fitness for c in ranked], dtype=float)
    if np.any(np.isnan(fit)):
        raise ValueError("fitness values must not be NaN")
    if np.any(fit[1:] < fit[:-1]):
        raise ValueError("candidates must be sorted by ascending fitness")
    if np.count_nonzero(np.isfinite(fit[: state.mu])) < state.mu:
        raise GenerationInfeasible(
            f"only {np.count_nonzero(np.isfinite(fit))} of {state.lam} offspring are feasible; need {state.mu}")

    n, mu, w = state.dim, state.mu, state.weights
    k = StrategyConstants.for_state(n, state.mueff)
    X = np.array([c.point for c in ranked[:mu]], dtype=float)
    if X.shape != (mu, n):
        raise ValueError(f"candidate points must have length {n}")

    old_mean = state.mean
    Y = (X - old_mean) / state.sigma
    y = w @ Y
    mean = old_mean + w @ (X - old_mean)
    vals, vecs = state.eig()
    inv_sqrt_c_y = vecs @ ((vecs.T @ y) / np.sqrt(vals))

    gen = state.generation + 1
    ps = (1 - k.cs) * state.path_sigma + math.sqrt(k.cs * (2 - k.cs) * state.mueff) * inv_sqrt_c_y
    ps_norm = float(np.linalg.norm(ps))
    hsig = ps_norm / math.sqrt(1 - (1 - k.cs) ** (2 * gen)) / k.chi_n < 1.4 + 2 / (n + 1)
    pc = (1 - k.cc) * state.path_cov + hsig * math.sqrt(k.cc * (2 - k.cc) * state.mueff) * y

    rank_mu = (Y * w[:, None]).T @ Y
    cov = ((1 - k.c1 - k.cmu) * state.cov
           + k.c1 * (np.outer(pc, pc) + (1 - hsig) * k.cc * (2 - k.cc) * state.cov)
           + k.cmu * rank_mu)
    cov = np.triu(cov) + np.triu(cov, 1).T
    sigma = state.sigma * math.exp((k.cs / k.ds) * (ps_norm / k.chi_n - 1))

    try:
        eig = (cov, *_eigh(cov))
    except CovarianceError:
        eig = None
    return replace(state, mean=mean, cov=cov, sigma=sigma, path_sigma=ps, path_cov=pc,
                   generation=gen, eval_count=state.eval_count + state.lam, _eig=eig)


def es_repair(state: EsState) -> EsState:
    """Symmetrize ``cov`` and floor its eigenvalues at 1e-12 of the largest."""
    cov = (state.cov + state.cov.T) / 2
    vals, vecs = np.linalg.eigh(cov)
    top = max(float(vals[-1]), np.finfo(float).tiny)
    floor = 1e-12 * top
    if vals[0] >= floor:
        return replace(state, cov=cov, _eig=(cov, vals, vecs))
    vals = np.maximum(vals, floor)
    cov = (vecs * vals) @ vecs.T
    cov = (cov + cov.T) / 2
    return replace(state, cov=cov, _eig=None)


def rank(points: np.ndarray, fitness: np.ndarray) -> list[ScoredCandidate]:
    """Sort offspring by ascending fitness (stable, so ties keep sample order)."""
    order = np.argsort(fitness, kind="stable")
    return [ScoredCandidate(points[i], float(fitness[i])) for i in order]


def minimize(f: Callable[[np.ndarray], float], x0, sigma0: float, rng: np.random.Generator,
             max_evals: int, target: float = -np.inf, lam: int | None = None):
    """Plain ask/tell loop; returns ``(best_x, best_f, evals, state)``.

    Stops once the best fitness drops below ``target`` or ``max_evals`` is spent.
    """
    state = es_init(x0, sigma0, lam)
    best_x, best_f = np.array(x0, dtype=float), math.inf
    while state.eval_count < max_evals:
        X = es_ask(state, rng)
        fit = np.array([f(x) for x in X], dtype=float)
        i = int(np.argmin(fit))
        if fit[i] < best_f:
            best_x, best_f = X[i].copy(), float(fit[i])
        state = es_tell(state, rank(X, fit))
        if best_f < target:
            break
        if state._eig is None:
            state = es_repair(state)
    return best_x, best_f, state.eval_count, state
