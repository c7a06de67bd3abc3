import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import tiny_config
from gradutil import max_rel_error
from mintad import autodiff as ad
from mintad.autodiff import Tensor
from mintad.inr import INR, SIGMA_FLOOR, DistributionDecoder, PositionTable, query_self_attention_map
from mintad.losses import prior_loss
from mintad.rng import Stream
from mintad.train import train


def layers(seq):
    return [(lin.weight.data.tolist(), lin.bias.data.tolist()) for lin in seq]


def force_unit_modulation(inr):
    """Zero modulation weights with unit bias make every alpha_i all-ones."""
    for lin in inr.mod:
        lin.weight.data[:] = 0
        lin.bias.data[:] = 1


class TestINRForward:
    def test_matches_oracle(self, rng):
        inr = INR(4, 6, Stream(1), depth=5)
        for _ in range(5):
            z, t = rng.normal(size=3), rng.dirichlet(np.ones(4))
            out = inr(Tensor(z), Tensor(t)).data
            ref = oracles.inr_forward(z.tolist(), t.tolist(), layers(inr.syn), layers(inr.mod))
            np.testing.assert_allclose(out, ref, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("seed", range(5))
    def test_unit_modulation_is_siren(self, seed):
        gen = np.random.default_rng(seed)
        inr = INR(4, 8, Stream(seed), depth=5)
        force_unit_modulation(inr)
        z = gen.normal(size=(7, 3))
        t = gen.dirichlet(np.ones(4), size=7)
        out = inr(Tensor(z), Tensor(t)).data
        h = z
        for lin in inr.syn:
            h = np.sin(h @ lin.weight.data + lin.bias.data)
        assert np.array_equal(out, h)
        np.testing.assert_allclose(out[0], oracles.siren_forward(z[0].tolist(), layers(inr.syn)), atol=1e-12)

    def test_zero_position_zero_bias(self, rng):
        inr = INR(4, 6, Stream(0), depth=1)
        inr.syn[0].bias.data[:] = 0
        out = inr(Tensor(np.zeros(3)), Tensor(rng.dirichlet(np.ones(4)))).data
        assert np.all(out == 0)

    def test_dimension_errors(self):
        inr = INR(4, 6, Stream(0))
        with pytest.raises(ad.ShapeError):
            inr(Tensor(np.zeros(2)), Tensor(np.zeros(4)))
        with pytest.raises(ad.ShapeError):
            inr(Tensor(np.zeros(3)), Tensor(np.zeros(5)))

    def test_token_concatenated_every_layer(self):
        inr = INR(4, 6, Stream(0), depth=3)
        assert [l.n_in for l in inr.mod] == [7, 10, 10]
        assert [l.n_in for l in inr.syn] == [3, 6, 6]


class TestQueryMap:
    def test_single_cell(self, rng):
        inr = INR(4, 6, Stream(0))
        pos = rng.normal(size=(1, 3))
        t = rng.dirichlet(np.ones(4), size=2)
        q = inr.query_map(Tensor(pos), Tensor(t)).data
        assert q.shape == (2, 1, 6)
        for b in range(2):
            np.testing.assert_allclose(q[b, 0], inr(Tensor(pos[0]), Tensor(t[b])).data, atol=1e-14)

    def test_identical_positions_identical_queries(self, rng):
        inr = INR(4, 6, Stream(0))
        pos = np.repeat(rng.normal(size=(1, 3)), 5, axis=0)
        q = inr.query_map(Tensor(pos), Tensor(rng.dirichlet(np.ones(4), size=1))).data[0]
        assert np.all(q == q[0])

    def test_distinct_tokens_distinct_maps(self, rng):
        inr = INR(4, 6, Stream(0))
        pos = PositionTable(9, Stream(1))()
        t = Tensor(rng.dirichlet(np.ones(4), size=2))
        q = inr.query_map(pos, t).data
        assert np.max(np.abs(q[0] - q[1])) > 0

    def test_token_batch_must_be_2d(self):
        inr = INR(4, 6, Stream(0))
        with pytest.raises(ad.ShapeError):
            inr.query_map(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))

    def test_continuous_in_token(self, rng):
        inr = INR(4, 16, Stream(2))
        pos = PositionTable(6, Stream(3))()
        t = rng.dirichlet(np.ones(4), size=1)
        d = rng.normal(size=(1, 4))
        d /= np.linalg.norm(d)
        base = inr.query_map(pos, Tensor(t)).data
        slopes = [np.max(np.abs(inr.query_map(pos, Tensor(t + delta * d)).data - base)) / delta
                  for delta in (1e-3, 1e-4)]
        assert max(slopes) < 1e3
        # first-order behaviour: the slope barely changes between the two scales
        assert abs(slopes[0] - slopes[1]) <= 0.1 * max(slopes) + 1e-12

    def test_position_table_shape(self):
        table = PositionTable(12, Stream(0))()
        assert table.shape == (12, 3) and table.requires_grad


class TestDecoder:
    def test_zero_weights(self, rng):
        dec = DistributionDecoder(6, 4, Stream(0), hidden=5)
        for p in dec.parameters():
            p.data[:] = 0
        g = dec(Tensor(rng.normal(size=(3, 6))))
        assert np.all(g.mu.data == 0)
        np.testing.assert_allclose(g.sigma.data, np.log(2.0), rtol=1e-15)

    def test_matches_oracle(self, rng):
        dec = DistributionDecoder(6, 4, Stream(5), hidden=7)
        q = rng.normal(size=6)
        g = dec(Tensor(q))
        mu, sigma = oracles.decode_distribution(q.tolist(), layers([dec.l1, dec.l2, dec.l3]), 4)
        np.testing.assert_allclose(g.mu.data, mu, atol=1e-12)
        np.testing.assert_allclose(g.sigma.data, sigma, atol=1e-12)

    def test_sigma_positive_on_many_inputs(self, rng):
        dec = DistributionDecoder(6, 4, Stream(1))
        g = dec(Tensor(rng.normal(size=(10_000, 6)) * 10))
        assert np.all(g.sigma.data >= SIGMA_FLOOR)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.01, 1e3))
    def test_sigma_positive_property(self, seed, scale):
        gen = np.random.default_rng(seed)
        dec = DistributionDecoder(5, 3, Stream(seed))
        for p in dec.parameters():
            p.data *= scale
        g = dec(Tensor(gen.normal(size=(8, 5)) * scale))
        assert np.all(g.sigma.data > 0)


class TestSelfAttentionMap:
    def test_rows_sum_to_one(self, rng):
        a = query_self_attention_map(rng.normal(size=(9, 8)))
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(a >= 0)

    def test_identical_queries_uniform(self, rng):
        q = np.repeat(rng.normal(size=(1, 8)), 6, axis=0)
        np.testing.assert_allclose(query_self_attention_map(q), 1 / 6, atol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            query_self_attention_map(np.zeros((0, 4)))

    def test_trained_queries_more_structured_than_perturbed_constant(self, rng):
        cfg = tiny_config(schedule={"total_epochs": 30, "decay_epoch": 25})
        model = train(cfg).model
        q = model.forward(rng.normal(size=(1, 3, 4, 4))).query.data[0]
        # control: the first query repeated at every cell, plus noise at 1% of the query scale
        control = np.repeat(q[:1], len(q), axis=0) + 0.01 * np.abs(q).mean() * rng.normal(size=q.shape)
        dev = lambda a: np.abs(a - 1 / len(a)).sum()  # noqa: E731
        assert dev(query_self_attention_map(q)) > 10 * dev(query_self_attention_map(control))


class TestGradients:
    def test_prior_through_decoder_and_inr(self, rng):
        D, T, K = 3, 4, 6
        inr = INR(T, K, Stream(0), depth=3, omega0=3.0)
        dec = DistributionDecoder(K, D, Stream(1), hidden=5)
        pos = PositionTable(4, Stream(2)).table
        token = ad.Parameter(rng.dirichlet(np.ones(T), size=2))
        f = Tensor(rng.normal(size=(2, 4, D)))

        def loss():
            g = dec(inr.query_map(pos, token))
            return prior_loss(f, g.mu, g.sigma)

        params = inr.parameters() + dec.parameters() + [pos, token]
        assert max_rel_error(loss, params, 3, rng) < 1e-4
