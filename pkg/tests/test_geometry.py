import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maxent_doe.errors import DataError, ParameterError
from maxent_doe.geometry import Domain, NodeSet, fill_distance, knn, make_grid


UNIT = Domain.cube(0.0, 1.0, 1)
SQUARE = Domain.cube(-1.0, 1.0, 2)


def test_domain_rejects_inverted_bounds():
    with pytest.raises(ParameterError):
        Domain([0.0, 1.0], [1.0, 1.0])


def test_domain_parse_round_trip():
    dom = Domain.parse("-1,1;0,2.5")
    assert dom.d == 2
    assert Domain.parse(dom.format()) == dom
    assert dom.volume == pytest.approx(5.0)


@pytest.mark.parametrize("text", ["", "1", "0,1;2", "a,b"])
def test_domain_parse_errors(text):
    with pytest.raises(ParameterError):
        Domain.parse(text)


def test_make_grid_examples():
    np.testing.assert_allclose(make_grid(UNIT, 3).points[:, 0], [0.0, 0.5, 1.0])
    corners = make_grid(SQUARE, 2).points
    np.testing.assert_array_equal(corners, [[-1, -1], [-1, 1], [1, -1], [1, 1]])
    line = make_grid(UNIT, 101).points[:, 0]
    np.testing.assert_allclose(np.diff(line), 0.01, atol=1e-15)


def test_make_grid_needs_two_points():
    with pytest.raises(ParameterError):
        make_grid(UNIT, 1)


def test_nodeset_rejects_duplicates_and_outside_points():
    with pytest.raises(DataError):
        NodeSet([[0.0, 0.0], [0.0, 0.0]], domain=SQUARE)
    with pytest.raises(DataError):
        NodeSet([[0.0, 2.0]], domain=SQUARE)
    with pytest.raises(DataError):
        NodeSet([[0.0, 0.0]], values=[np.nan], domain=SQUARE)


def test_knn_examples():
    idx, dist = knn([0.0, 0.5, 1.0], [0.1], 1)
    assert idx.tolist() == [0] and dist[0] == pytest.approx(0.1)
    idx, dist = knn([0.0, 0.5, 1.0], [0.5], 1)
    assert idx.tolist() == [1] and dist[0] == 0.0
    with pytest.raises(ParameterError):
        knn([0.0, 0.5], [0.1], 3)


def test_knn_axis_neighbours_on_grid():
    pts = make_grid(Domain.cube(0.0, 9.0, 2), 10).points
    q = np.array([4.0, 5.0])
    idx, _ = knn(pts, q, 5)
    # the query is a node itself; the next four are its axis neighbours
    brute = np.argsort(np.linalg.norm(pts - q, axis=1), kind="stable")[:5]
    assert idx.tolist() == brute.tolist()
    nb = pts[idx[1:]]
    assert np.allclose(np.sort(np.abs(nb - q).sum(axis=1)), 1.0)


def test_knn_ties_go_to_lower_index():
    idx, _ = knn([1.0, -1.0, 0.0], [0.0], 3)
    assert idx.tolist() == [2, 0, 1]


@given(arrays(float, (12, 2), elements=st.floats(-1, 1)), st.integers(1, 12), st.randoms())
def test_knn_distances_sorted_and_order_free(pts, k, rnd):
    q = np.zeros(2)
    _, dist = knn(pts, q, k)
    assert np.all(np.diff(dist) >= 0)
    perm = list(range(12))
    rnd.shuffle(perm)
    _, dist2 = knn(pts[perm], q, k)
    np.testing.assert_array_equal(dist, dist2)


def test_fill_distance_examples():
    assert fill_distance([0.0, 0.5, 1.0], UNIT, 101) == pytest.approx(0.25)
    assert fill_distance([[0.5, 0.5]], Domain.cube(0.0, 1.0, 2), 11) == pytest.approx(np.sqrt(0.5))
    grid5 = make_grid(SQUARE, 5).points
    # brute force: distance from every point of a 200^2 grid to the nearest node
    fine = make_grid(SQUARE, 200).points
    brute = np.sqrt(((fine[:, None, :] - grid5[None]) ** 2).sum(-1)).min(1).max()
    assert fill_distance(grid5, SQUARE, 200) == pytest.approx(brute)
    assert brute == pytest.approx(0.25 * np.sqrt(2), rel=1e-2)


def test_fill_distance_empty_set():
    with pytest.raises(ParameterError):
        fill_distance(np.empty((0, 2)), SQUARE)


@given(arrays(float, (6, 2), elements=st.floats(-1, 1)), arrays(float, (2,), elements=st.floats(-1, 1)))
def test_fill_distance_never_grows_when_adding_a_point(pts, extra):
    before = fill_distance(pts, SQUARE, 40)
    after = fill_distance(np.vstack([pts, extra]), SQUARE, 40)
    assert after <= before + 1e-15


def test_fill_distance_converges_with_resolution():
    pts = np.array([[0.1, -0.3], [0.7, 0.2], [-0.5, 0.9]])
    for r in (50, 100):
        a = fill_distance(pts, SQUARE, r)
        b = fill_distance(pts, SQUARE, 2 * r)
        cell = np.linalg.norm(SQUARE.extent / (r - 1))
        assert abs(a - b) < cell
