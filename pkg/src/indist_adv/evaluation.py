"""Attack-rate protocol, dataset-size sweeps, robust retraining and
church-window slices of the decision boundary."""

from __future__ import annotations

import csv
import enum
import functools
import json
import re
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cma_search import PARAMETRIC_MAX_GENERATIONS, AttackOutcome, attack, parametric_space
from .mlp import MlpModel, TrainConfig, accuracy, mlp_init, predict, train
from .parallel import parallel_map
from .parametric_data import LabeledDataset, UniformPairSupport, membership_batch, sample_dataset
from .seeding import derive_seed, make_rng

ACCURACY_GATE = 0.99


@dataclass
class AttackConfig:
    max_generations: int = PARAMETRIC_MAX_GENERATIONS
    sigma0: float | None = None  # None: 5% of the mean coordinate range


@dataclass
class AttackRateReport:
    n_starts: int
    n_repeats: int
    per_repeat_rates: list[float]
    mean_rate: float
    std_rate: float
    mean_distance: float | None
    std_distance: float | None
    outcomes: list[list[AttackOutcome]] = field(default_factory=list, repr=False)

    @property
    def successes(self) -> list[AttackOutcome]:
        return [o for rep in self.outcomes for o in rep if o.success]

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("outcomes")
        return d


class StartPoolExhausted(RuntimeError):
    """Could not assemble enough correctly classified start points."""


def _classify_ok(classifier, X, y) -> np.ndarray:
    return np.argmax(classifier(X), axis=1) == y


def draw_correct_starts(classifier, support: UniformPairSupport, n_starts: int,
                        rng: np.random.Generator, pool: LabeledDataset | None = None):
    """``n_starts`` correctly classified in-support points and their labels.

    Points come from a random order of ``pool`` first, then from fresh draws
    of the support (label chosen uniformly).  Gives up after
    ``100 * n_starts`` candidates.
    """
    budget = 100 * n_starts
    pts, labels = [], []
    drawn = 0
    if pool is not None and len(pool):
        order = rng.permutation(len(pool))[:budget]
        drawn = len(order)
        X, y = pool.points[order], pool.labels[order]
        ok = _classify_ok(classifier, X, y) & (membership_batch(support, X) == y)
        pts += list(X[ok][:n_starts])
        labels += list(y[ok][:n_starts])
    while len(pts) < n_starts and drawn < budget:
        m = min(2 * (n_starts - len(pts)) + 8, budget - drawn)
        y = rng.integers(0, 2, size=m)
        lo = np.where(y == 0, support.class0_range[0], support.class1_range[0])[:, None]
        hi = np.where(y == 0, support.class0_range[1], support.class1_range[1])[:, None]
        X = lo + (hi - lo) * rng.random((m, support.dim))
        drawn += m
        ok = _classify_ok(classifier, X, y)
        need = n_starts - len(pts)
        pts += list(X[ok][:need])
        labels += list(y[ok][:need])
    if len(pts) < n_starts:
        raise StartPoolExhausted(
            f"only {len(pts)} of {n_starts} candidates were classified correctly "
            f"after {drawn} draws; model accuracy is too low")
    return np.array(pts), np.array(labels, dtype=np.int64)


def _attack_job(job, classifier, support, cfg: AttackConfig):
    x, y, seed = job
    return attack(classifier, int(y), x, parametric_space(support, int(y)),
                  cfg.max_generations, cfg.sigma0, seed)


def _mean_std(values):
    if not values:
        return None, None
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std())


def attack_rate(classifier, support: UniformPairSupport, n_starts: int = 100, n_repeats: int = 10,
                attack_cfg: AttackConfig | None = None, seed: int = 0,
                test_pool: LabeledDataset | None = None, jobs: int = 1) -> AttackRateReport:
    """Fraction of correctly classified starts for which CMA-Search succeeds.

    Repeat ``r`` draws its starts with seed ``derive_seed(seed, "attack", r)``
    and attacks start ``i`` with ``derive_seed(seed, "attack", r, "start", i)``.
    """
    cfg = attack_cfg or AttackConfig()
    run = functools.partial(_attack_job, classifier=classifier, support=support, cfg=cfg)
    rates, all_outcomes = [], []
    for r in range(n_repeats):
        rng = make_rng(derive_seed(seed, "attack", r))
        X, y = draw_correct_starts(classifier, support, n_starts, rng, test_pool)
        jobs_r = [(X[i], y[i], derive_seed(seed, "attack", r, "start", i)) for i in range(n_starts)]
        outcomes = parallel_map(run, jobs_r, jobs)
        rates.append(sum(o.success for o in outcomes) / n_starts)
        all_outcomes.append(outcomes)
    mean_rate, std_rate = _mean_std(rates)
    dists = [o.distance for rep in all_outcomes for o in rep if o.success]
    mean_d, std_d = _mean_std(dists)
    return AttackRateReport(n_starts, n_repeats, rates, mean_rate, std_rate, mean_d, std_d, all_outcomes)


# -- model fitting ---------------------------------------------------------

@dataclass(frozen=True)
class ModelSeeds:
    data_seed: int
    init_seed: int
    sgd_seed: int

    @classmethod
    def derive(cls, master: int, *labels) -> ModelSeeds:
        return cls(derive_seed(master, *labels, "data"), derive_seed(master, *labels, "init"),
                   derive_seed(master, *labels, "sgd"))


def fit_model(dim: int, dataset_size: int, seeds: ModelSeeds, train_cfg: TrainConfig | None = None,
              support: UniformPairSupport | None = None):
    """Sample ``dataset_size`` points (half per class) and train a fresh MLP.

    Returns ``(model, data, loss_history)``.
    """
    support = support or UniformPairSupport(dim)
    data = sample_dataset(support, max(dataset_size // 2, 1), seeds.data_seed)
    cfg = TrainConfig(**{**asdict(train_cfg or TrainConfig()), "sgd_seed": seeds.sgd_seed})
    model, history = train(mlp_init(dim, seeds.init_seed), data, cfg)
    return model, data, history


def held_out_accuracy(model: MlpModel, support: UniformPairSupport, seed: int, n: int = 2000) -> float:
    return accuracy(model, sample_dataset(support, n // 2, seed))


# -- scaling sweep ----------------------------------------------------------

@dataclass
class SweepConfig:
    n_starts: int = 100
    n_repeats: int = 1
    test_size: int = 2000
    attack: AttackConfig = field(default_factory=AttackConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class SweepRow:
    dim: int
    size: int
    repeat: int
    accuracy: float
    mean_rate: float | None
    mean_distance: float | None
    skipped: bool


SWEEP_COLUMNS = ["dim", "size", "repeat", "accuracy", "mean_rate", "mean_distance", "skipped"]


def scaling_sweep(dims, dataset_sizes, repeats: int, cfg: SweepConfig | None = None, seed: int = 0,
                  jobs: int = 1) -> list[SweepRow]:
    """One model per ``(dim, size, repeat)``; models under the accuracy gate are skipped."""
    cfg = cfg or SweepConfig()
    rows = []
    for dim in dims:
        support = UniformPairSupport(dim)
        for size in dataset_sizes:
            for rep in range(repeats):
                label = ("sweep", dim, size, rep)
                model, _, _ = fit_model(dim, size, ModelSeeds.derive(seed, *label), cfg.train, support)
                acc = held_out_accuracy(model, support, derive_seed(seed, *label, "test"), cfg.test_size)
                if acc <= ACCURACY_GATE:
                    rows.append(SweepRow(dim, size, rep, acc, None, None, True))
                    continue
                rep_report = attack_rate(model, support, cfg.n_starts, cfg.n_repeats, cfg.attack,
                                         derive_seed(seed, *label, "attack"), jobs=jobs)
                rows.append(SweepRow(dim, size, rep, acc, rep_report.mean_rate,
                                     rep_report.mean_distance, False))
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in SWEEP_COLUMNS])


def read_sweep_csv(path) -> list[SweepRow]:
    def opt(s):
        return float(s) if s else None
    with open(path, newline="") as fh:
        return [SweepRow(int(r["dim"]), int(r["size"]), int(r["repeat"]), float(r["accuracy"]),
                         opt(r["mean_rate"]), opt(r["mean_distance"]), r["skipped"] == "true")
                for r in csv.DictReader(fh)]


# -- robust retraining ------------------------------------------------------

def augment_and_retrain(init_model: MlpModel, data: LabeledDataset, adversarial_points,
                        adversarial_labels, cfg: TrainConfig | None = None) -> MlpModel:
    """Retrain ``init_model`` (the untrained initial weights) on data plus adversarial points.

    Labels must be the ground-truth support class of each adversarial point.
    """
    adv = np.asarray(adversarial_points, dtype=float).reshape(-1, data.support.dim) \
        if len(adversarial_points) else np.empty((0, data.support.dim))
    if adv.shape[1] != init_model.input_dim:
        raise ValueError(f"adversarial points have dim {adv.shape[1]}, model expects {init_model.input_dim}")
    labels = np.asarray(adversarial_labels, dtype=np.int64)
    if len(labels) != len(adv):
        raise ValueError("adversarial points and labels differ in length")
    truth = membership_batch(data.support, adv)
    if np.any(truth != labels):
        raise ValueError("adversarial labels must equal each point's support class")
    model, _ = train(init_model, data.concat(adv, labels), cfg)
    return model


def collect_adversarials(classifier, support: UniformPairSupport, n_points: int,
                         attack_cfg: AttackConfig | None = None, seed: int = 0, n_starts_per_round: int = 100,
                         max_rounds: int = 100, seed_outcomes=(), jobs: int = 1):
    """Gather ``n_points`` in-distribution adversarial points and their true labels.

    Successes in ``seed_outcomes`` are used first.  Further rounds attack
    fresh correctly classified starts; round ``r`` uses
    ``derive_seed(seed, "collect", r)``.  May return fewer points if
    ``max_rounds`` runs out.
    """
    cfg = attack_cfg or AttackConfig()
    pts = [o.adversarial for o in seed_outcomes if o.success][:n_points]
    labels = [o.true_label for o in seed_outcomes if o.success][:n_points]
    run = functools.partial(_attack_job, classifier=classifier, support=support, cfg=cfg)
    r = 0
    while len(pts) < n_points and r < max_rounds:
        rs = derive_seed(seed, "collect", r)
        X, y = draw_correct_starts(classifier, support, n_starts_per_round, make_rng(rs))
        jobs_r = [(X[i], y[i], derive_seed(rs, "start", i)) for i in range(n_starts_per_round)]
        for o in parallel_map(run, jobs_r, jobs):
            if o.success and len(pts) < n_points:
                pts.append(o.adversarial)
                labels.append(o.true_label)
        r += 1
    dim = support.dim
    return np.array(pts).reshape(-1, dim), np.array(labels, dtype=np.int64)


@dataclass
class RobustTrainReport:
    dim: int
    dataset_size: int
    n_adversarial: int
    accuracy_before: float
    accuracy_after: float
    before: AttackRateReport
    after: AttackRateReport

    def to_json(self) -> dict:
        return {
            "dim": self.dim, "dataset_size": self.dataset_size, "n_adversarial": self.n_adversarial,
            "accuracy_before": self.accuracy_before, "accuracy_after": self.accuracy_after,
            "before": self.before.to_json(), "after": self.after.to_json(),
        }


def robust_train_experiment(dim: int, dataset_size: int, n_adversarial: int, seeds: ModelSeeds,
                            attack_seed: int, test_seed: int, n_starts: int = 100, n_repeats: int = 10,
                            attack_cfg: AttackConfig | None = None, train_cfg: TrainConfig | None = None,
                            test_size: int = 2000, collect_max_generations: int | None = 100,
                            jobs: int = 1):
    """Attack a model, retrain it from the same initial weights with the found
    adversarial points added, and attack again with the same attack seed.

    Successes from the first attack-rate run are reused as adversarial
    points; the rest are collected with ``collect_max_generations`` as the cap
    (``None`` keeps the attack cap).  Successful searches finish within a few
    dozen generations, so a low collection cap mostly trims failed searches.

    Returns ``(report, model_before, model_after, adversarial_points, labels)``.
    """
    support = UniformPairSupport(dim)
    cfg = TrainConfig(**{**asdict(train_cfg or TrainConfig()), "sgd_seed": seeds.sgd_seed})
    model, data, _ = fit_model(dim, dataset_size, seeds, cfg, support)
    acc0 = held_out_accuracy(model, support, test_seed, test_size)
    before = attack_rate(model, support, n_starts, n_repeats, attack_cfg, attack_seed, jobs=jobs)
    seed_outs = [o for rep in before.outcomes for o in rep]
    acfg = attack_cfg or AttackConfig()
    collect_cfg = acfg if collect_max_generations is None else replace(acfg, max_generations=collect_max_generations)
    adv, labels = collect_adversarials(model, support, n_adversarial, collect_cfg,
                                       derive_seed(attack_seed, "collect"), n_starts, seed_outcomes=seed_outs,
                                       jobs=jobs)
    robust = augment_and_retrain(mlp_init(dim, seeds.init_seed), data, adv, labels, cfg)
    acc1 = held_out_accuracy(robust, support, test_seed, test_size)
    after = attack_rate(robust, support, n_starts, n_repeats, attack_cfg, attack_seed, jobs=jobs)
    report = RobustTrainReport(dim, dataset_size, len(adv), acc0, acc1, before, after)
    return report, model, robust, adv, labels


# -- church-window plots ----------------------------------------------------

class Cell(enum.IntEnum):
    CORRECT = 0
    ADVERSARIAL_IN_DIST = 1
    OUT_OF_DIST = 2


CELL_COLORS = {
    Cell.CORRECT: (255, 255, 255),
    Cell.ADVERSARIAL_IN_DIST: (255, 0, 0),
    Cell.OUT_OF_DIST: (0, 0, 0),
}


@dataclass(eq=False)
class ChurchWindowGrid:
    start: np.ndarray
    adv_dir: np.ndarray
    orth_dir: np.ndarray
    extents: tuple[float, float]
    steps: tuple[int, int]
    cells: np.ndarray  # (rows, cols) of Cell codes; rows index beta, cols index alpha
    true_label: int | None = None

    @property
    def alphas(self) -> np.ndarray:
        return np.linspace(-self.extents[0], self.extents[0], self.steps[1])

    @property
    def betas(self) -> np.ndarray:
        return np.linspace(-self.extents[1], self.extents[1], self.steps[0])

    def center_row(self) -> np.ndarray:
        """Cells of the beta = 0 row (odd row counts only)."""
        return self.cells[self.steps[0] // 2]

    def meta(self) -> dict:
        return {
            "start": self.start.tolist(),
            "adv_dir": self.adv_dir.tolist(),
            "orth_dir": self.orth_dir.tolist(),
            "extents": list(self.extents),
            "steps": list(self.steps),
            "true_label": self.true_label,
            "legend": {c.name: list(CELL_COLORS[c]) for c in Cell},
            "cells": self.cells.tolist(),
        }


def random_orthogonal(direction: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unit vector orthogonal to unit ``direction``, uniformly oriented."""
    while True:
        v = rng.standard_normal(direction.size)
        v -= (v @ direction) * direction
        norm = np.linalg.norm(v)
        if norm >= 1e-8:
            v /= norm
            # one more projection pass keeps |v . direction| at rounding level
            v -= (v @ direction) * direction
            return v / np.linalg.norm(v)


def label_cells(classifier, support: UniformPairSupport, X: np.ndarray) -> np.ndarray:
    """Correct / adversarial-in-distribution / out-of-distribution per point.

    A point's truth is the class whose support contains it.
    """
    truth = membership_batch(support, X)
    out = np.full(len(X), int(Cell.OUT_OF_DIST), dtype=np.int64)
    inside = truth >= 0
    if inside.any():
        pred = np.argmax(classifier(X[inside]), axis=1)
        out[inside] = np.where(pred == truth[inside], int(Cell.CORRECT), int(Cell.ADVERSARIAL_IN_DIST))
    return out


def church_window(classifier, support: UniformPairSupport, start, adversarial,
                  extents: tuple[float, float] | None = None, steps: tuple[int, int] = (101, 101),
                  orth_seed: int = 0) -> ChurchWindowGrid:
    """Classify a fixed-increment grid in the plane of the adversarial direction
    and a random orthogonal one.

    Default extents are three times the start-to-adversarial distance in both
    directions.
    """
    start = np.asarray(start, dtype=float)
    delta = np.asarray(adversarial, dtype=float) - start
    dist = float(np.linalg.norm(delta))
    if dist == 0:
        raise ValueError("adversarial point equals the start point")
    adv_dir = delta / dist
    orth_dir = random_orthogonal(adv_dir, make_rng(orth_seed))
    if extents is None:
        extents = (3 * dist, 3 * dist)
    rows, cols = steps
    alphas = np.linspace(-extents[0], extents[0], cols)
    betas = np.linspace(-extents[1], extents[1], rows)
    A, B = np.meshgrid(alphas, betas)
    X = start + A.reshape(-1, 1) * adv_dir + B.reshape(-1, 1) * orth_dir
    cells = label_cells(classifier, support, X).reshape(rows, cols)
    label = int(membership_batch(support, start[None])[0])
    return ChurchWindowGrid(start, adv_dir, orth_dir, tuple(extents), (rows, cols), cells,
                            label if label >= 0 else None)


_BAND = re.compile(r"C+A+O+")


def has_clean_band(grid: ChurchWindowGrid) -> bool:
    """True if the beta = 0 row, read from the start outward along the
    adversarial direction, is Correct+ Adversarial+ OutOfDist+."""
    row = grid.center_row()[grid.steps[1] // 2:]
    text = "".join("CAO"[int(c)] for c in row)
    return _BAND.fullmatch(text) is not None


def render_grid(grid: ChurchWindowGrid, path) -> None:
    """Plain PPM (P3), one pixel per cell, plus ``<path>.json`` with grid metadata.

    Row 0 of the image is the most negative beta.
    """
    rows, cols = grid.cells.shape
    lines = ["P3", f"{cols} {rows}", "255"]
    for r in range(rows):
        lines.append(" ".join("%d %d %d" % CELL_COLORS[Cell(int(c))] for c in grid.cells[r]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(f"{path}.json", "w") as fh:
        json.dump(grid.meta(), fh)
