import numpy as np
import pytest

from setgen.autodiff import Rng, Tensor
from setgen.errors import CapacityError, ContractError
from setgen.model import (CREATORS, ModelConfig, SizeModel, VaeModel, decode,
                          encode, generate, predict_size_learned,
                          reparameterize, sample_size_empirical,
                          size_aux_loss)


@pytest.fixture(scope="module")
def tiny_cfg():
    return ModelConfig(width=16, latent_dim=8, angle_dim=8, heads=2,
                       n_max=12, n_ref=24)


@pytest.fixture(scope="module")
def model(tiny_cfg):
    return VaeModel.create(Rng(0), tiny_cfg)


class TestEncoder:
    def test_permutation_invariance(self, model):
        rng = Rng(1)
        x = rng.normal((7, 3))
        mu, lv = encode(model.encoder, Tensor(x))
        for _ in range(5):
            p = rng.permutation(7)
            mu2, lv2 = encode(model.encoder, Tensor(x[p]))
            assert np.allclose(mu.data, mu2.data, atol=1e-12)
            assert np.allclose(lv.data, lv2.data, atol=1e-12)

    def test_batched_matches_single(self, model):
        rng = Rng(2)
        xb = rng.normal((4, 6, 3))
        mub, lvb = encode(model.encoder, Tensor(xb))
        for i in range(4):
            mu, lv = encode(model.encoder, Tensor(xb[i]))
            assert np.allclose(mub.data[i], mu.data, atol=1e-12)
            assert np.allclose(lvb.data[i], lv.data, atol=1e-12)

    def test_logvar_clipped(self, model):
        x = Rng(3).normal((5, 3)) * 1e6
        _, lv = encode(model.encoder, Tensor(x))
        assert np.all(np.abs(lv.data) <= 10.0)


class TestDecoder:
    @pytest.mark.parametrize("creator", CREATORS)
    def test_decode_shapes_all_creators(self, tiny_cfg, creator):
        cfg = ModelConfig(**{**tiny_cfg.__dict__, "creator": creator})
        m = VaeModel.create(Rng(4), cfg)
        z = Tensor(Rng(5).normal(cfg.latent_dim))
        out = decode(m.decoder, z, 6, Rng(6))
        assert out.shape == (6, 3)

    @pytest.mark.parametrize("creator", ["topn", "firstn", "mlp"])
    def test_decode_deterministic(self, tiny_cfg, creator):
        cfg = ModelConfig(**{**tiny_cfg.__dict__, "creator": creator})
        m = VaeModel.create(Rng(4), cfg)
        z = Tensor(Rng(5).normal(cfg.latent_dim))
        a = decode(m.decoder, z, 6).data
        b = decode(m.decoder, z, 6).data
        assert np.array_equal(a, b)

    def test_batched_matches_single(self, model, tiny_cfg):
        zb = Tensor(Rng(7).normal((3, tiny_cfg.latent_dim)))
        out = decode(model.decoder, zb, 5).data
        for i in range(3):
            zi = Tensor(zb.data[i])
            assert np.allclose(out[i], decode(model.decoder, zi, 5).data,
                               atol=1e-12)

    def test_capacity_error_propagates(self, tiny_cfg):
        cfg = ModelConfig(**{**tiny_cfg.__dict__, "creator": "firstn"})
        m = VaeModel.create(Rng(8), cfg)
        with pytest.raises(CapacityError):
            decode(m.decoder, Tensor(Rng(9).normal(cfg.latent_dim)), 13)


class TestReparam:
    def test_zero_logvar_unit_noise(self):
        mu = Tensor(np.zeros(4))
        lv = Tensor(np.zeros(4))
        draws = np.stack([reparameterize(mu, lv, Rng(i)).data
                          for i in range(500)])
        assert abs(draws.mean()) < 0.05
        assert abs(draws.std() - 1.0) < 0.05

    def test_deterministic_given_rng(self):
        mu, lv = Tensor(np.ones(4)), Tensor(np.zeros(4))
        assert np.array_equal(reparameterize(mu, lv, Rng(3)).data,
                              reparameterize(mu, lv, Rng(3)).data)


class TestSizeModels:
    def test_empirical_sampling_distribution(self):
        sm = SizeModel.empirical({3: 1.0, 5: 3.0})
        rng = Rng(1)
        draws = [sample_size_empirical(sm, rng) for _ in range(2000)]
        assert set(draws) == {3, 5}
        assert abs(draws.count(5) / 2000 - 0.75) < 0.05

    def test_empirical_extrapolation_shift(self):
        sm = SizeModel.empirical({5: 1.0})
        assert sample_size_empirical(sm, Rng(0), extrapolate=True) == 15
        sm2 = SizeModel.empirical({44: 1.0})
        assert sample_size_empirical(sm2, Rng(0), extrapolate=True) == 45

    def test_learned_aux_loss_trains_argmax(self):
        from setgen.autodiff import backward, zero_grads
        from setgen.layers import AdamState, adam_step
        sm = SizeModel.learned(Rng(2), 4, 20)
        z = Tensor(Rng(3).normal(4))
        params = [t for _, t in sm.params()]
        opt = AdamState(lr=0.05)
        for _ in range(200):
            zero_grads(params)
            backward(size_aux_loss(sm, z, 7))
            adam_step(opt, params)
        assert predict_size_learned(sm, z) == 7

    def test_mode_contracts(self):
        sm = SizeModel.empirical({3: 1.0})
        with pytest.raises(ContractError):
            predict_size_learned(sm, Tensor(np.zeros(4)))
        with pytest.raises(ContractError):
            sample_size_empirical(SizeModel.learned(Rng(0), 4, 10), Rng(0))


class TestGenerate:
    def test_generation_counts_and_sizes(self, tiny_cfg):
        m = VaeModel.create(Rng(10), tiny_cfg)
        sm = SizeModel.empirical({4: 1.0, 6: 2.0})
        sets = generate(m, sm, 12, Rng(11))
        assert len(sets) == 12
        assert all(s.shape[1] == 3 and s.shape[0] in (4, 6) for s in sets)

    def test_capacity_retry_exhaustion(self, tiny_cfg):
        cfg = ModelConfig(**{**tiny_cfg.__dict__, "creator": "firstn"})
        m = VaeModel.create(Rng(12), cfg)
        sm = SizeModel.empirical({cfg.n_max + 5: 1.0})
        with pytest.raises(CapacityError):
            generate(m, sm, 1, Rng(13), max_retries=3)
