from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from corrrise import _kernels
from corrrise.errors import ContractError, DegenerateInputError
from corrrise.numerics import (EvalCurve, apply_mask, auc_trapezoid, cosine_similarity, pearson_correlation,
                               pixel_correlation, split_signed)


def pearson_oracle(x, y):
    """Exact rational Pearson r squared-sign pair, evaluated by the textbook formula."""
    x = [Fraction(v) for v in x]
    y = [Fraction(v) for v in y]
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return 0.0
    return float(sxy) / (float(sxx) * float(syy)) ** 0.5


def naive_pixel_pearson(masks, scores):
    n, h, w = masks.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            col = masks[:, i, j]
            if col.max() == col.min() or scores.max() == scores.min():
                continue
            mx = sum(col) / n
            my = sum(scores) / n
            sxy = sum((col[k] - mx) * (scores[k] - my) for k in range(n))
            sxx = sum((col[k] - mx) ** 2 for k in range(n))
            syy = sum((scores[k] - my) ** 2 for k in range(n))
            out[i, j] = sxy / np.sqrt(sxx * syy)
    return out


class TestCosine:
    @pytest.mark.parametrize("a,b,expected", [
        ([1, 0], [0, 1], 0.0),
        ([1, 2, 3], [2, 4, 6], 1.0),
        ([1, 0], [-1, 0], -1.0),
    ])
    def test_examples(self, a, b, expected):
        assert cosine_similarity(a, b) == pytest.approx(expected, abs=1e-12)

    def test_zero_norm_raises(self):
        with pytest.raises(DegenerateInputError):
            cosine_similarity([0, 0], [1, 0])

    def test_dim_mismatch(self):
        with pytest.raises(ContractError):
            cosine_similarity([1, 0], [1, 0, 0])

    @given(arrays(np.float64, 5, elements=st.floats(-10, 10)), st.floats(1e-3, 1e3))
    def test_positive_scaling(self, a, lam):
        if np.linalg.norm(a) < 1e-6:
            return
        assert cosine_similarity(a, lam * a) == pytest.approx(1.0, abs=1e-12)


class TestPearson:
    def test_perfect_linear(self):
        assert pearson_correlation([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)

    def test_zero_variance_convention(self):
        assert pearson_correlation([1, 2, 3], [5, 5, 5]) == 0.0

    def test_hand_example(self):
        expected = pearson_oracle([1, 2, 3, 4], [1, 3, 2, 4])
        assert expected == pytest.approx(0.8, abs=1e-15)
        assert pearson_correlation([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)

    def test_constant_series_with_inexact_mean(self):
        # the float mean of 500 copies of 0.1 is not 0.1; still must give exactly 0
        assert pearson_correlation(np.arange(500.0), np.full(500, 0.1)) == 0.0

    @pytest.mark.parametrize("x,y", [([1, 2], [1, 2, 3]), ([1], [2])])
    def test_contract(self, x, y):
        with pytest.raises(ContractError):
            pearson_correlation(x, y)

    series = arrays(np.float64, st.integers(2, 30), elements=st.floats(-1e6, 1e6))

    @given(st.data())
    def test_bounds_and_symmetry(self, data):
        x = data.draw(self.series)
        y = data.draw(arrays(np.float64, x.size, elements=st.floats(-1e6, 1e6)))
        r = pearson_correlation(x, y)
        assert -1.0 <= r <= 1.0
        assert r == pearson_correlation(y, x) or abs(r - pearson_correlation(y, x)) < 1e-12

    @given(st.data(), st.floats(0.01, 100), st.floats(-100, 100))
    def test_affine_invariance(self, data, a, b):
        x = data.draw(arrays(np.float64, 12, elements=st.floats(0, 1)))
        y = data.draw(arrays(np.float64, 12, elements=st.floats(-1, 1)))
        r = pearson_correlation(x, y)
        if np.ptp(y) < 1e-3 or np.ptp(x) < 1e-3:
            return
        assert pearson_correlation(x, a * y + b) == pytest.approx(r, abs=1e-9)
        assert pearson_correlation(x, -a * y + b) == pytest.approx(-r, abs=1e-9)

    def test_matches_rational_oracle(self, rng):
        for _ in range(20):
            x = rng.random(17)
            y = rng.random(17)
            assert pearson_correlation(x, y) == pytest.approx(pearson_oracle(x, y), abs=1e-12)


class TestPixelCorrelation:
    @pytest.mark.parametrize("impl", ["default", "numpy", "numba"])
    def test_against_double_loop(self, rng, impl):
        if impl == "numba" and not _kernels.NUMBA_AVAILABLE:
            pytest.skip("numba unavailable")
        for _ in range(5):
            masks = rng.random((16, 8, 8))
            masks[:, 0, 0] = 0.3  # constant pixel
            scores = rng.random(16)
            expected = naive_pixel_pearson(masks, scores)
            if impl == "default":
                got = pixel_correlation(masks, scores)
            else:
                fn = getattr(_kernels, f"pixel_pearson_{impl}")
                got = np.asarray(fn(masks.reshape(16, 64), scores)).reshape(8, 8)
            np.testing.assert_allclose(got, expected, atol=1e-10, rtol=0)
            assert got[0, 0] == 0.0

    def test_shape_errors(self):
        with pytest.raises(ContractError):
            pixel_correlation(np.zeros((3, 2, 2)), np.zeros(4))
        with pytest.raises(ContractError):
            pixel_correlation(np.zeros((1, 2, 2)), np.zeros(1))


class TestApplyMask:
    def test_identity_and_annihilation(self, rng):
        img = rng.random((5, 6, 3))
        np.testing.assert_array_equal(apply_mask(img, np.ones((5, 6))), img)
        np.testing.assert_array_equal(apply_mask(img, np.zeros((5, 6))), np.zeros_like(img))

    def test_scalar_product(self):
        img = np.full((2, 2, 1), 0.8)
        m = np.ones((2, 2))
        m[1, 0] = 0.5
        assert apply_mask(img, m)[1, 0, 0] == pytest.approx(0.4)

    def test_mismatch(self):
        with pytest.raises(ContractError):
            apply_mask(np.zeros((4, 4, 3)), np.zeros((4, 5)))

    @given(arrays(np.float64, (4, 5, 3), elements=st.floats(0, 1)),
           arrays(np.float64, (4, 5), elements=st.floats(0, 1)),
           arrays(np.float64, (4, 5), elements=st.floats(0, 1)))
    def test_composition(self, img, m1, m2):
        np.testing.assert_allclose(apply_mask(img, m1 * m2), apply_mask(apply_mask(img, m1), m2), atol=1e-15)


class TestAUC:
    def test_flat(self):
        assert auc_trapezoid([(0, 0.5), (0.5, 0.5), (1, 0.5)]) == pytest.approx(50.0)

    def test_triangle(self):
        assert auc_trapezoid([(0, 1.0), (1, 0.0)]) == pytest.approx(50.0)

    def test_rectangle_plus_triangle(self):
        assert auc_trapezoid([(0, 1.0), (0.5, 1.0), (1, 0.0)]) == pytest.approx(75.0, abs=1e-12)

    @pytest.mark.parametrize("pts", [
        [(0, 1), (0.6, 1), (0.5, 1), (1, 0)],
        [(0.1, 1), (1, 1)],
        [(0, 1), (1, 1.2)],
        [(0, 1)],
    ])
    def test_contract(self, pts):
        with pytest.raises(ContractError):
            auc_trapezoid(pts)

    @given(st.lists(st.floats(0.01, 1), min_size=1, max_size=8, unique=True),
           st.lists(st.floats(0, 1), min_size=10, max_size=10))
    def test_against_fine_riemann_sum(self, cuts, accs):
        p = np.unique(np.concatenate([[0.0, 1.0], np.round(cuts, 3)]))
        acc = np.asarray(accs[:p.size] + [0.5] * max(0, p.size - len(accs)))[:p.size]
        # midpoint Riemann sum on a grid that contains every knot is exact for
        # piecewise linear curves, up to rounding
        grid = np.linspace(0, 1, 200001)
        mids = (grid[:-1] + grid[1:]) / 2
        riemann = np.sum(np.interp(mids, p, acc) * np.diff(grid)) * 100
        assert auc_trapezoid(np.column_stack([p, acc])) == pytest.approx(riemann, abs=1e-9)

    def test_eval_curve(self):
        c = EvalCurve.from_points([0, 0.5, 1], [1, 1, 0])
        assert c.auc_percent == pytest.approx(75.0)
        assert c.accuracy_at(0.5) == 1.0
        assert c.points[0] == (0.0, 1.0)


class TestSplit:
    def test_examples(self):
        pos, neg = split_signed(np.array([[0.5, -0.5]]))
        np.testing.assert_array_equal(pos, [[0.5, 0]])
        np.testing.assert_array_equal(neg, [[0, -0.5]])
        z = np.zeros((2, 2))
        pos, neg = split_signed(z)
        assert not pos.any() and not neg.any()
        s = np.full((2, 3), 0.3)
        pos, neg = split_signed(s)
        np.testing.assert_array_equal(pos, s)
        assert not neg.any()

    @given(arrays(np.float64, (5, 7), elements=st.floats(-1, 1)))
    def test_reconstruction(self, s):
        pos, neg = split_signed(s)
        np.testing.assert_array_equal(pos + neg, s)
        assert (pos >= 0).all() and (neg <= 0).all()
