"""CMA-Search: look for a misclassified point inside the training support.

Starting from a correctly classified point, an evolution strategy mutates the
active coordinates only.  Offspring that leave the support get fitness
``+inf``; feasible offspring are scored by the model's probability of the true
class.  The first feasible offspring whose predicted class differs from the
true class ends the search.

A *classifier* here is any callable mapping a batch ``(m, d)`` of points to
``(m, k)`` log class-probabilities.  Working in log space keeps the ranking
informative when the true-class probability rounds to 1.0 in float64;
ordering by ``log p`` and by ``p`` agree wherever ``p`` is distinguishable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import evo_strategy as es
from .parametric_data import UniformPairSupport, membership_batch
from .seeding import make_rng

Classifier = Callable[[np.ndarray], np.ndarray]

EUCLIDEAN = "euclidean"
RANGE_PERCENT = "range_normalized_percent"

PARAMETRIC_MAX_GENERATIONS = 1500
SCENE_MAX_GENERATIONS = 15
SIGMA0_RANGE_FRACTION = 0.05


class AttackPreconditionError(ValueError):
    """Start point is outside the support or already misclassified."""


@dataclass(eq=False)
class SearchSpace:
    """Where the search may go.

    ``in_support`` maps a batch of full-dimensional points to a boolean array:
    is each point inside the support of the start's class?  ``ranges`` holds
    one ``(lo, hi)`` row per coordinate.
    """

    in_support: Callable[[np.ndarray], np.ndarray]
    active_mask: np.ndarray
    ranges: np.ndarray
    distance_kind: str = EUCLIDEAN

    def __post_init__(self):
        self.active_mask = np.asarray(self.active_mask, dtype=bool)
        self.ranges = np.asarray(self.ranges, dtype=float)
        if not self.active_mask.any():
            raise ValueError("search space needs at least one active coordinate")
        if self.ranges.shape != (self.active_mask.size, 2):
            raise ValueError(f"ranges must have shape ({self.active_mask.size}, 2)")
        if self.distance_kind not in (EUCLIDEAN, RANGE_PERCENT):
            raise ValueError(f"unknown distance kind {self.distance_kind!r}")

    @property
    def dim(self) -> int:
        return self.active_mask.size

    @property
    def active_spans(self) -> np.ndarray:
        r = self.ranges[self.active_mask]
        return r[:, 1] - r[:, 0]

    def default_sigma0(self) -> float:
        return SIGMA0_RANGE_FRACTION * float(np.mean(self.active_spans))

    def distance(self, a, b) -> float:
        delta = (np.asarray(b, float) - np.asarray(a, float))[self.active_mask]
        d = float(np.linalg.norm(delta))
        if self.distance_kind == RANGE_PERCENT:
            d = 100.0 * d / float(np.linalg.norm(self.active_spans))
        return d


def parametric_space(support: UniformPairSupport, label: int) -> SearchSpace:
    """All coordinates active; feasible means inside class ``label``'s cube."""
    return SearchSpace(
        in_support=lambda X: membership_batch(support, X) == label,
        active_mask=np.ones(support.dim, dtype=bool),
        ranges=support.ranges(label),
        distance_kind=EUCLIDEAN,
    )


@dataclass
class AttackOutcome:
    start: np.ndarray
    adversarial: np.ndarray | None
    iterations_used: int
    evals_used: int
    distance: float | None
    distance_kind: str
    seed: int | None = None
    true_label: int | None = None
    stop_reason: str = "max_generations"  # or "misclassified"
    # best finite true-class log-probability seen after each completed generation
    best_trace: list[float] = field(default_factory=list, repr=False)

    @property
    def success(self) -> bool:
        return self.adversarial is not None

    def to_json(self) -> dict:
        return {
            "start": [float(v) for v in self.start],
            "adversarial": None if self.adversarial is None else [float(v) for v in self.adversarial],
            "iterations": self.iterations_used,
            "evals": self.evals_used,
            "distance": self.distance,
            "distance_kind": self.distance_kind,
            "seed": self.seed,
            "true_label": self.true_label,
            "stop_reason": self.stop_reason,
        }

    @classmethod
    def from_json(cls, obj: dict) -> AttackOutcome:
        adv = obj.get("adversarial")
        return cls(
            start=np.array(obj["start"], dtype=float),
            adversarial=None if adv is None else np.array(adv, dtype=float),
            iterations_used=int(obj["iterations"]),
            evals_used=int(obj["evals"]),
            distance=obj.get("distance"),
            distance_kind=obj["distance_kind"],
            seed=obj.get("seed"),
            true_label=obj.get("true_label"),
            stop_reason=obj.get("stop_reason", "max_generations"),
        )


def write_outcomes(outcomes, path) -> None:
    with open(path, "w") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.to_json()) + "\n")


def read_outcomes(path) -> list[AttackOutcome]:
    with open(path) as fh:
        return [AttackOutcome.from_json(json.loads(line)) for line in fh if line.strip()]


def score_batch(classifier: Classifier, true_label: int, X: np.ndarray, space: SearchSpace):
    """Vectorized fitness: ``(log_p_true, misclassified)`` per row.

    Infeasible rows get ``log_p_true = +inf`` and ``misclassified = False``;
    the classifier only sees the feasible rows.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    feasible = np.asarray(space.in_support(X), dtype=bool)
    logp_true = np.full(len(X), np.inf)
    wrong = np.zeros(len(X), dtype=bool)
    if feasible.any():
        logp = np.asarray(classifier(X[feasible]), dtype=float)
        logp_true[feasible] = logp[:, true_label]
        # first maximum wins, so ties resolve toward the lower class index
        wrong[feasible] = np.argmax(logp, axis=1) != true_label
    return logp_true, wrong


def fitness(classifier: Classifier, true_label: int, x, space: SearchSpace) -> tuple[float, bool]:
    """Probability of ``true_label`` at ``x`` (``+inf`` off-support) and whether ``x`` is misclassified."""
    logp_true, wrong = score_batch(classifier, true_label, np.asarray(x, float)[None], space)
    lp = float(logp_true[0])
    return (math.inf if math.isinf(lp) else math.exp(lp)), bool(wrong[0])


def attack(classifier: Classifier, true_label: int, start, space: SearchSpace,
           max_generations: int = PARAMETRIC_MAX_GENERATIONS, sigma0: float | None = None,
           seed: int = 0, max_resamples: int = 10) -> AttackOutcome:
    """Run one CMA-Search from ``start``.

    The strategy works on the active coordinates divided by their range
    spans, so one step size suits coordinates with very different units.
    ``sigma0`` is given in input units and converted with the mean span.
    Inactive coordinates are copied from ``start`` unchanged.

    If a generation still has fewer than ``mu`` feasible offspring after
    ``max_resamples`` redraws of its infeasible slots, no update is made, the
    step size is halved, and the generation still counts toward
    ``max_generations``.  ``iterations_used`` counts generations consumed.
    """
    start = np.array(start, dtype=float)
    if start.shape != (space.dim,):
        raise ValueError(f"start must have length {space.dim}")
    lp0, wrong0 = score_batch(classifier, true_label, start[None], space)
    if math.isinf(lp0[0]):
        raise AttackPreconditionError("start point lies outside the support")
    if wrong0[0]:
        raise AttackPreconditionError("start point is already misclassified")

    mask = space.active_mask
    spans = space.active_spans
    sigma0 = space.default_sigma0() if sigma0 is None else float(sigma0)
    state = es.es_init(np.zeros(int(mask.sum())), sigma0 / float(np.mean(spans)))
    rng = make_rng(seed)
    base = start.copy()

    def embed(U):
        X = np.repeat(base[None], len(U), axis=0)
        X[:, mask] = base[mask] + U * spans
        return X

    evals = 0
    best = float(lp0[0])
    trace: list[float] = []
    for gen in range(max_generations):
        U = es.es_ask(state, rng)
        logp_true = np.full(len(U), np.inf)
        pending = np.arange(len(U))
        for attempt in range(max_resamples + 1):
            if attempt:
                # redraw only the infeasible slots
                U[pending] = es.es_ask(state, rng)[: pending.size]
            X = embed(U[pending])
            lp, wrong = score_batch(classifier, true_label, X, space)
            hits = np.flatnonzero(wrong)
            if hits.size:
                j = int(hits[0])
                evals += j + 1
                adv = X[j]
                return AttackOutcome(start, adv, gen, evals,
                                     space.distance(start, adv), space.distance_kind,
                                     seed, true_label, "misclassified", trace)
            evals += pending.size
            logp_true[pending] = lp
            pending = pending[~np.isfinite(lp)]
            if len(U) - pending.size >= state.mu:
                break
        else:
            # collapsed onto the support boundary: shrink and try again
            state = replace(state, sigma=state.sigma / 2)
            trace.append(best)
            continue
        state = es.es_tell(state, es.rank(U, logp_true))
        if state._eig is None:
            state = es.es_repair(state)
        best = min(best, float(np.min(logp_true)))
        trace.append(best)
    return AttackOutcome(start, None, max_generations, evals, None, space.distance_kind,
                         seed, true_label, "max_generations", trace)
