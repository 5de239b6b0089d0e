import numpy as np
import pytest
from numpy.testing import assert_allclose

from dynproto import backend
from dynproto import _kernels_numba as knb
from dynproto import _kernels_numpy as knp
from dynproto.errors import InvalidConfig


@pytest.fixture(autouse=True)
def restore_backend():
    yield
    backend.set_backend(None)


def random_cosines(rng, n, c, m):
    # valid cosine range, arbitrary values
    return (rng.uniform(-1, 1, (n, c)), rng.uniform(-1, 1, (n, m)))


class TestKernelEquivalence:
    @pytest.mark.parametrize("seed", range(5))
    def test_ratio_scores(self, seed):
        rng = np.random.default_rng((50, seed))
        n, c, m = rng.integers(1, 40), rng.integers(1, 12), rng.integers(0, 30)
        cos_id, cos_ood = random_cosines(rng, n, c, m)
        tau = float(rng.uniform(0.01, 2.0))
        k = float(rng.integers(1, 9))
        assert_allclose(knb.ratio_scores(cos_id, cos_ood, tau, k),
                        knp.ratio_scores(cos_id, cos_ood, tau, k),
                        rtol=1e-12, atol=0)

    def test_ratio_empty_ood_is_ones_in_both(self):
        cos_id = np.zeros((4, 3))
        empty = np.zeros((4, 0))
        for mod in (knb, knp):
            assert np.array_equal(mod.ratio_scores(cos_id, empty, 0.05, 5.0),
                                  np.ones(4))
            assert np.array_equal(mod.ratio_scores(cos_id, None, 0.05, 5.0),
                                  np.ones(4))

    @pytest.mark.parametrize("seed", range(5))
    def test_softmax_max(self, seed):
        rng = np.random.default_rng((51, seed))
        rows = rng.standard_normal((int(rng.integers(1, 50)),
                                    int(rng.integers(1, 20)))) * 40
        assert_allclose(knb.softmax_max(rows), knp.softmax_max(rows),
                        rtol=1e-12, atol=0)

    @pytest.mark.parametrize("seed", range(8))
    def test_birch_assign(self, seed):
        rng = np.random.default_rng((52, seed))
        n, d = int(rng.integers(1, 80)), int(rng.integers(1, 10))
        feats = rng.standard_normal((n, d))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        threshold = float(rng.uniform(0.05, 1.0))
        cap = int(rng.integers(1, 20))
        la, ca, lsa, ssa = knb.birch_assign(feats, threshold, cap)
        lb, cb, lsb, ssb = knp.birch_assign(feats, threshold, cap)
        assert np.array_equal(la, lb)
        assert np.array_equal(ca, cb)
        assert_allclose(lsa, lsb, rtol=0, atol=1e-12)
        assert_allclose(ssa, ssb, rtol=0, atol=1e-12)
        assert len(ca) <= min(cap, n)


class TestSelection:
    def test_explicit_names(self):
        backend.set_backend("numpy")
        assert backend.active_backend() == "numpy"
        assert backend.kernels() is knp
        backend.set_backend("numba")
        assert backend.active_backend() == "numba"
        assert backend.kernels() is knb

    def test_env_resolution(self, monkeypatch):
        monkeypatch.setenv(backend.ENV_VAR, "numpy")
        backend.set_backend(None)
        assert backend.active_backend() == "numpy"
        monkeypatch.setenv(backend.ENV_VAR, "NumBa")
        backend.set_backend(None)
        assert backend.active_backend() == "numba"

    def test_auto_prefers_numba_when_available(self, monkeypatch):
        monkeypatch.setenv(backend.ENV_VAR, "auto")
        backend.set_backend(None)
        assert backend.active_backend() == "numba"

    def test_unknown_name_rejected(self):
        with pytest.raises(InvalidConfig):
            backend.set_backend("cuda")

    def test_unknown_env_value_rejected(self, monkeypatch):
        monkeypatch.setenv(backend.ENV_VAR, "gpu")
        backend.set_backend(None)
        with pytest.raises(InvalidConfig):
            backend.active_backend()
        backend.set_backend("numpy")

    def test_warmup_runs_on_both(self):
        for name in ("numpy", "numba"):
            backend.set_backend(name)
            backend.warmup()
