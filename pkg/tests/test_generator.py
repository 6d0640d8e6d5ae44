import math

import numpy as np
import pytest
from _support import make_batch

from rtd_lab import numerics as nx
from rtd_lab.config import GeneratorConfig
from rtd_lab.generator import (
    build_discriminator_input,
    exit_head_input_width,
    exit_head_logits,
    generator_forward,
    gumbel_sample,
    init_generator,
    mlm_loss,
)
from rtd_lab.masking import apply_mlm_mask
from rtd_lab.model import EncoderDims, ModelParams, init_embeddings

V, H = 60, 16


def _setup(rng, zero=False):
    cfg = GeneratorConfig()
    dims = EncoderDims(V, H, 2, 32, 24)
    p = ModelParams()
    init_embeddings(p, dims, rng)
    init_generator(p, cfg, dims, rng)
    if zero:
        for _, t in p:
            t.data[...] = 0.0
    masked = apply_mlm_mask(make_batch([24, 17, 9], 24, V, rng), rng, vocab_size=V)
    return cfg, p, masked


def test_snapshot_per_exit_with_shape(rng):
    cfg, p, m = _setup(rng)
    snaps = generator_forward(p, cfg, m.input_ids, m.attention, 2)
    assert sorted(snaps) == [1, 2, 3, 4]
    assert all(s.shape == (3, 24, H) for s in snaps.values())
    assert sorted(generator_forward(p, cfg, m.input_ids, m.attention, 2, upto_layer=2)) == [1, 2]


def test_head_widths_and_logit_shapes(rng):
    cfg, p, m = _setup(rng)
    assert exit_head_input_width(cfg, 0, H) == H
    assert exit_head_input_width(cfg, 2, H) == 3 * H
    assert p["gen.exit3.proj.w"].shape == (3 * H, H)
    snaps = generator_forward(p, cfg, m.input_ids, m.attention, 2)
    for j in range(4):
        assert exit_head_logits(p, cfg, j, snaps, m.selected_flat).shape == (m.n_selected, V)
    with pytest.raises(IndexError):
        exit_head_logits(p, cfg, 4, snaps, m.selected_flat)


def test_zero_params_give_uniform_logits(rng):
    cfg, p, m = _setup(rng, zero=True)
    snaps = generator_forward(p, cfg, m.input_ids, m.attention, 2)
    z = exit_head_logits(p, cfg, 3, snaps, m.selected_flat).data
    assert np.allclose(z, z[:, :1])
    loss = mlm_loss([nx.Tensor(z)], m.original_ids, [1.0])
    assert float(loss.data) == pytest.approx(math.log(V), rel=1e-5)


def test_gumbel_zero_noise_is_argmax(rng):
    z = rng.normal(size=(50, 9))
    assert (gumbel_sample(z, rng, noise=0.0) == z.argmax(-1)).all()


@pytest.mark.parametrize(
    "logits, expected",
    [([math.log(1), math.log(2), math.log(3)], [1 / 6, 2 / 6, 3 / 6]), ([2.5, 2.5], [0.5, 0.5])],
)
def test_gumbel_frequencies(logits, expected):
    rng = np.random.default_rng(3)
    draws = gumbel_sample(np.tile(logits, (100_000, 1)), rng)
    freq = np.bincount(draws, minlength=len(logits)) / draws.size
    assert np.abs(freq - expected).max() < 0.01


def test_gumbel_rejects_nonfinite(rng):
    with pytest.raises(nx.NonFiniteError):
        gumbel_sample(np.array([[0.0, np.nan]]), rng)


def test_mlm_loss_weights(rng):
    labels = rng.integers(0, 7, size=12)
    logits = [nx.Tensor(rng.normal(size=(12, 7))) for _ in range(4)]
    singles = [float(mlm_loss([z], labels, [1.0]).data) for z in logits]
    top = float(mlm_loss(logits, labels, [0, 0, 0, 1]).data)
    assert top == pytest.approx(singles[-1], rel=1e-6)
    mixed = float(mlm_loss(logits, labels, [1, 2, 3, 4]).data)
    assert mixed == pytest.approx(sum(w * s for w, s in zip([0.1, 0.2, 0.3, 0.4], singles)), rel=1e-6)


def test_mlm_loss_skips_ignored_labels(rng):
    z = nx.Tensor(rng.normal(size=(4, 5)))
    full = float(mlm_loss([z], np.array([1, -100, 2, -100]), [1.0]).data)
    sub = float(nx.cross_entropy(nx.Tensor(z.data[[0, 2]]), np.array([1, 2])).data)
    assert full == pytest.approx(sub, rel=1e-6)
    with pytest.raises(ValueError):
        mlm_loss([z], np.full(4, -100), [1.0])


def test_discriminator_input_labels(rng):
    m = apply_mlm_mask(make_batch([30, 30], 32, 100, rng), rng, vocab_size=100)
    ids, labels = build_discriminator_input(m, m.original_ids)
    assert (ids == m.source_ids).all() and labels.sum() == 0

    wrong = np.where(m.original_ids == 5, 6, 5)
    ids, labels = build_discriminator_input(m, wrong)
    assert labels.sum() == m.n_selected
    assert (ids[~m.selected] == m.source_ids[~m.selected]).all()


def test_random_generator_replaced_fraction():
    rng = np.random.default_rng(0)
    m = apply_mlm_mask(make_batch([34] * 4000, 34, 100, rng, n_reserved=0), rng, vocab_size=100)
    _, labels = build_discriminator_input(m, rng.integers(0, 100, size=m.n_selected))
    assert labels[m.selected].mean() == pytest.approx(0.99, abs=0.005)
