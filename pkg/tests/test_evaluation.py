import numpy as np
import pytest

from indist_adv.evaluation import (ACCURACY_GATE, CELL_COLORS, AttackConfig, Cell, ChurchWindowGrid, ModelSeeds,
                                   StartPoolExhausted, SweepConfig, SweepRow, attack_rate, augment_and_retrain,
                                   church_window, collect_adversarials, draw_correct_starts, fit_model,
                                   has_clean_band, held_out_accuracy, read_sweep_csv, render_grid, scaling_sweep,
                                   write_sweep_csv)
from indist_adv.mlp import TrainConfig, mlp_init, train
from indist_adv.parametric_data import UniformPairSupport, membership_batch, sample_dataset
from indist_adv.seeding import make_rng

S = UniformPairSupport(10)
FAST = AttackConfig(max_generations=120)


@pytest.fixture(scope="module")
def model():
    m, data, _ = fit_model(10, 1000, ModelSeeds.derive(1))
    assert held_out_accuracy(m, S, 5) > ACCURACY_GATE
    return m


def truth(support):
    def clf(X):
        m = membership_batch(support, X)
        out = np.full((len(X), 2), np.log(0.5))
        out[m == 0] = np.log([0.9, 0.1])
        out[m == 1] = np.log([0.1, 0.9])
        return out
    return clf


def test_attack_rate_report(model):
    rep = attack_rate(model, S, n_starts=6, n_repeats=2, attack_cfg=FAST, seed=3)
    assert len(rep.per_repeat_rates) == 2
    for r, outs in zip(rep.per_repeat_rates, rep.outcomes):
        assert 0 <= r <= 1 and r == sum(o.success for o in outs) / 6
    assert abs(rep.mean_rate - np.mean(rep.per_repeat_rates)) <= 1e-12
    assert abs(rep.std_rate - np.std(rep.per_repeat_rates)) <= 1e-12
    d = [o.distance for o in rep.successes]
    if d:
        assert rep.mean_distance == pytest.approx(np.mean(d))
    for o in rep.successes:
        assert membership_batch(S, o.adversarial[None])[0] == o.true_label
        assert np.argmax(model(o.adversarial[None])[0]) != o.true_label


def test_attack_rate_parallel_matches_serial(model):
    a = attack_rate(model, S, 4, 1, FAST, seed=9, jobs=1)
    b = attack_rate(model, S, 4, 1, FAST, seed=9, jobs=2)
    assert [o.to_json() for o in a.outcomes[0]] == [o.to_json() for o in b.outcomes[0]]


def test_attack_rate_truth_classifier():
    s = UniformPairSupport(3)
    rep = attack_rate(truth(s), s, 3, 2, AttackConfig(max_generations=20), seed=0)
    assert rep.mean_rate == 0 and rep.mean_distance is None and rep.std_distance is None


def test_start_pool_exhausted():
    s = UniformPairSupport(3)

    def always_wrong(X):
        out = np.full((len(X), 2), np.log(0.5))
        m = membership_batch(s, X)
        out[:, 0] = np.where(m == 0, np.log(0.1), np.log(0.9))
        out[:, 1] = np.where(m == 0, np.log(0.9), np.log(0.1))
        return out
    with pytest.raises(StartPoolExhausted):
        draw_correct_starts(always_wrong, s, 5, make_rng(0))


def test_starts_come_from_pool_first(model):
    pool = sample_dataset(S, 50, 77)
    X, y = draw_correct_starts(model, S, 10, make_rng(1), pool)
    rows = {tuple(p) for p in pool.points}
    assert all(tuple(p) in rows for p in X)


def test_church_window_invariants(model, tmp_path):
    rep = attack_rate(model, S, 6, 1, FAST, seed=4)
    o = rep.successes[0]
    g = church_window(model, S, o.start, o.adversarial, steps=(41, 61), orth_seed=2)
    assert abs(g.adv_dir @ g.orth_dir) < 1e-9
    assert abs(np.linalg.norm(g.adv_dir) - 1) < 1e-12 and abs(np.linalg.norm(g.orth_dir) - 1) < 1e-12
    assert g.cells[20, 30] == Cell.CORRECT
    A, B = np.meshgrid(g.alphas, g.betas)
    X = g.start + A.reshape(-1, 1) * g.adv_dir + B.reshape(-1, 1) * g.orth_dir
    inside = membership_batch(S, X) >= 0
    flat = g.cells.reshape(-1)
    assert np.all(inside[flat == Cell.ADVERSARIAL_IN_DIST])
    assert not np.any(inside[flat == Cell.OUT_OF_DIST])
    assert g.extents == pytest.approx((3 * o.distance, 3 * o.distance))
    render_grid(g, tmp_path / "w.ppm")
    assert np.array_equal(read_ppm_cells(tmp_path / "w.ppm"), g.cells)
    assert (tmp_path / "w.ppm.json").exists()


def test_church_window_far_rows_out_of_dist(model):
    start = np.zeros(10)
    adv = np.full(10, 5.0)
    g = church_window(model, S, start, adv, extents=(40.0, 1.0), steps=(3, 41))
    assert np.all(g.cells[:, 0] == Cell.OUT_OF_DIST) and np.all(g.cells[:, -1] == Cell.OUT_OF_DIST)


def test_church_window_degenerate(model):
    with pytest.raises(ValueError):
        church_window(model, S, np.zeros(10), np.zeros(10))


def read_ppm_cells(path):
    tok = open(path).read().split()
    assert tok[0] == "P3"
    cols, rows = int(tok[1]), int(tok[2])
    px = np.array(tok[4:], dtype=int).reshape(rows, cols, 3)
    inv = {v: k for k, v in CELL_COLORS.items()}
    return np.array([[int(inv[tuple(p)]) for p in row] for row in px])


def _grid(cells):
    cells = np.asarray(cells)
    return ChurchWindowGrid(np.zeros(2), np.array([1.0, 0]), np.array([0, 1.0]), (1.0, 1.0), cells.shape, cells)


def test_render_colors(tmp_path):
    render_grid(_grid(np.zeros((2, 2), int)), tmp_path / "a.ppm")
    assert open(tmp_path / "a.ppm").read().split()[4:] == ["255"] * 12
    g = _grid([[0, 1, 2]])
    render_grid(g, tmp_path / "b.ppm")
    assert open(tmp_path / "b.ppm").read().split()[4:] == "255 255 255 255 0 0 0 0 0".split()


@pytest.mark.parametrize("row,clean", [
    ("OOCCCAAOO", True), ("OOOOAAAOO", False), ("OOOOCCAOO", True), ("OOOOCCCOO", False), ("OOOOCACAO", False), ("OOOOCAAAA", False),
])
def test_has_clean_band(row, clean):
    cells = [["CAO".index(c) for c in row]] * 3
    assert has_clean_band(_grid(cells)) is clean


def test_sweep_and_csv(tmp_path):
    cfg = SweepConfig(n_starts=3, n_repeats=1, test_size=400, attack=AttackConfig(60), train=TrainConfig(epochs=60))
    rows = scaling_sweep([4], [200], 2, cfg, seed=1)
    assert [(r.dim, r.size, r.repeat) for r in rows] == [(4, 200, 0), (4, 200, 1)]
    for r in rows:
        assert r.skipped == (r.accuracy <= ACCURACY_GATE)
        assert (r.mean_rate is None) == r.skipped
    rows.append(SweepRow(4, 400, 0, 0.5, None, None, True))
    write_sweep_csv(rows, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "dim,size,repeat,accuracy,mean_rate,mean_distance,skipped"
    assert read_sweep_csv(tmp_path / "s.csv") == rows


def test_augment_null_and_validation():
    data = sample_dataset(S, 100, 2)
    init = mlp_init(10, 3)
    cfg = TrainConfig(epochs=10, sgd_seed=4)
    plain, _ = train(init, data, cfg)
    assert augment_and_retrain(init, data, [], [], cfg).same_weights(plain)
    with pytest.raises(ValueError):
        augment_and_retrain(init, data, [np.zeros(10)], [1], cfg)
    with pytest.raises(ValueError):
        augment_and_retrain(init, data, [np.zeros(9)], [0], cfg)


def test_collect_adversarials(model):
    X, y = collect_adversarials(model, S, 3, FAST, seed=5, n_starts_per_round=6, max_rounds=5)
    assert len(X) == len(y) <= 3
    assert np.array_equal(membership_batch(S, X), y)
    assert np.all(np.argmax(model(X), axis=1) != y)
