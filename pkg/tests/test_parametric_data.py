import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from indist_adv.parametric_data import (LabeledDataset, Membership, UniformPairSupport, membership,
                                        membership_batch, read_dataset, sample_dataset, write_dataset)

DEF = UniformPairSupport(20)


def test_defaults():
    assert DEF.class0_range == (-10, 10) and DEF.class1_range == (20, 40)


@pytest.mark.parametrize("r0,r1", [((1, 0), (2, 3)), ((0, 5), (3, 8)), ((0, 1), (0, 1))])
def test_support_rejects(r0, r1):
    with pytest.raises(ValueError):
        UniformPairSupport(2, r0, r1)


def test_sample_defaults():
    d = sample_dataset(DEF, 500, 7)
    assert len(d) == 1000 and np.sum(d.labels == 0) == 500
    X0, X1 = d.points[d.labels == 0], d.points[d.labels == 1]
    assert np.all((X0 > -10) & (X0 < 10))
    assert np.all((X1 > 20) & (X1 < 40))


def test_sample_minimal():
    s = UniformPairSupport(1, (0, 1), (2, 3))
    d = sample_dataset(s, 1, 0)
    by = dict(zip(d.labels.tolist(), d.points[:, 0].tolist()))
    assert 0 < by[0] < 1 and 2 < by[1] < 3


def test_sample_endpoints_statistics():
    d = sample_dataset(DEF, 10_000, 3)
    for lab, (lo, hi) in ((0, (-10, 10)), (1, (20, 40))):
        X = d.points[d.labels == lab]
        tol = 0.005 * (hi - lo)
        assert np.all(X.min(axis=0) > lo) and np.all(X.min(axis=0) < lo + tol)
        assert np.all(X.max(axis=0) < hi) and np.all(X.max(axis=0) > hi - tol)


def test_sample_rejects_zero():
    with pytest.raises(ValueError):
        sample_dataset(DEF, 0, 0)


def test_membership_examples():
    assert membership(DEF, np.zeros(20)) is Membership.CLASS0
    assert membership(DEF, np.full(20, 15.0)) is Membership.OUTSIDE
    x = np.full(20, 25.0)
    x[3] = 41
    assert membership(DEF, x) is Membership.OUTSIDE
    with pytest.raises(ValueError):
        membership(DEF, np.zeros(19))


def test_membership_open_bounds():
    s = UniformPairSupport(2)
    assert membership(s, [10.0, 0.0]) is Membership.OUTSIDE
    assert membership(s, [np.nextafter(10.0, 0), 0.0]) is Membership.CLASS0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(1, 50), st.integers(0, 2**63))
def test_round_trip_membership_and_determinism(dim, n, seed):
    s = UniformPairSupport(dim)
    d = sample_dataset(s, n, seed)
    assert np.array_equal(membership_batch(s, d.points), d.labels)
    d2 = sample_dataset(s, n, seed)
    assert np.array_equal(d.points, d2.points) and np.array_equal(d.labels, d2.labels)


@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=3, max_size=3))
def test_disjoint(x):
    s = UniformPairSupport(3)
    m = membership(s, x)
    in0 = all(-10 < v < 10 for v in x)
    in1 = all(20 < v < 40 for v in x)
    assert not (in0 and in1)
    assert m == (Membership.CLASS0 if in0 else Membership.CLASS1 if in1 else Membership.OUTSIDE)


def test_file_round_trip(tmp_path):
    d = sample_dataset(UniformPairSupport(4), 5, 11)
    write_dataset(d, tmp_path / "d.csv")
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert '"ranges": [[-10.0, 10.0], [20.0, 40.0]]' in header
    e = read_dataset(tmp_path / "d.csv")
    assert np.array_equal(d.points, e.points) and np.array_equal(d.labels, e.labels)
    assert e.seed == 11 and e.support == d.support


def test_dataset_shape_checks():
    with pytest.raises(ValueError):
        LabeledDataset(DEF, np.zeros((3, 4)), np.zeros(3, dtype=int))
