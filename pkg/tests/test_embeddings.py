import numpy as np
import pytest

from skewrec import embeddings
from skewrec.errors import DataError


def tables(n_items=5, n_users=3, dim=4, max_len=6, seed=0):
    return embeddings.init_tables(n_items, n_users, dim, max_len,
                                  np.random.default_rng(seed), dtype=np.float64)


class TestBuildInputs:
    def test_padding_id_gives_pure_positional(self):
        t = tables()
        x = embeddings.build_inputs(np.zeros(6, dtype=int), t)
        np.testing.assert_array_equal(x, t.positional)

    def test_sum_arithmetic(self):
        t = tables(dim=4)
        t.item[2] = 1.0
        t.positional[:] = 1.0
        x = embeddings.build_inputs(np.array([2] * 6), t)
        np.testing.assert_array_equal(x, np.full((6, 4), 2.0))

    def test_shape_contract(self):
        t = tables(n_items=100, dim=64, max_len=50)
        ids = np.random.default_rng(1).integers(0, 101, size=50)
        assert embeddings.build_inputs(ids, t).shape == (50, 64)

    def test_out_of_range_errors(self):
        t = tables(n_items=5)
        with pytest.raises(DataError):
            embeddings.build_inputs(np.array([0, 1, 6, 0, 0, 0]), t)

    def test_linear_in_item_table(self):
        rng = np.random.default_rng(2)
        t = tables()
        t.positional[:] = 0.0
        ids = np.array([1, 2, 3, 1, 0, 5])
        e1 = rng.normal(size=t.item.shape)
        e2 = rng.normal(size=t.item.shape)
        a, b = 0.7, -1.3
        t.item[:] = a * e1 + b * e2
        combined = embeddings.build_inputs(ids, t).copy()
        t.item[:] = e1
        x1 = embeddings.build_inputs(ids, t).copy()
        t.item[:] = e2
        x2 = embeddings.build_inputs(ids, t).copy()
        np.testing.assert_allclose(combined, a * x1 + b * x2, rtol=1e-12)


class TestLookupUser:
    def test_identity(self):
        t = tables()
        np.testing.assert_array_equal(embeddings.lookup_user(0, t), t.user[0])

    def test_reflects_updates(self):
        t = tables()
        t.user[2] += 5.0
        np.testing.assert_array_equal(embeddings.lookup_user(2, t), t.user[2])

    def test_bound_check(self):
        t = tables(n_users=3)
        with pytest.raises(DataError):
            embeddings.lookup_user(3, t)


class TestInit:
    def test_padding_row_zero(self):
        t = tables()
        assert not t.item[0].any()

    def test_tables_finite(self):
        t = tables(n_items=50, n_users=20, dim=16, max_len=30)
        for arr in (t.item, t.positional, t.user):
            assert np.isfinite(arr).all()
