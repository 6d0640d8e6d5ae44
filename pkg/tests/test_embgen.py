import numpy as np
import pytest
from _support import make_batch

from rtd_lab import numerics as nx
from rtd_lab.embgen import (
    ReplacementError,
    aux_embedding_loss,
    nearest_candidates,
    noise_replace,
    pairwise_sq_dists,
    topk_replace,
)
from rtd_lab.masking import apply_mlm_mask


def test_k1_picks_nearest():
    emb = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]])
    assert nearest_candidates(emb, [0], k=1, n_reserved=0).tolist() == [[1]]
    assert nearest_candidates(emb, [2], k=1, n_reserved=0).tolist() == [[1]]


def test_reserved_and_self_excluded(rng):
    emb = rng.normal(size=(30, 4))
    cands = nearest_candidates(emb, np.arange(5, 30), k=6, n_reserved=5)
    assert (cands >= 5).all()
    assert not (cands == np.arange(5, 30)[:, None]).any()


def test_ties_go_to_smaller_id():
    emb = np.zeros((10, 2))
    emb[0] = 5.0
    assert nearest_candidates(emb, [3], k=3, n_reserved=1).tolist() == [[1, 2, 4]]


def test_k_too_large():
    with pytest.raises(ReplacementError):
        nearest_candidates(np.zeros((8, 2)), [6], k=3, n_reserved=5)


def test_pairwise_matches_direct(rng):
    q, t = rng.normal(size=(7, 5)), rng.normal(size=(11, 5))
    direct = ((q[:, None, :] - t[None, :, :]) ** 2).sum(-1)
    assert np.allclose(pairwise_sq_dists(q, t), direct)


def test_topk_labels_every_selected_position(rng):
    V = 200
    emb = rng.normal(size=(V, 16))
    m = apply_mlm_mask(make_batch([30, 20, 11], 32, V, rng), rng)
    ids, labels, repl = topk_replace(m, emb, 10, rng)
    assert labels.sum() == m.n_selected
    assert labels[m.content].mean() == pytest.approx(m.n_selected / m.content.sum())
    assert (ids[m.selected] != m.source_ids[m.selected]).all()
    assert (ids[~m.selected] == m.source_ids[~m.selected]).all()


def test_topk_choices_in_bruteforce_set():
    rng = np.random.default_rng(0)
    V, k = 200, 10
    emb = rng.normal(size=(V, 64))
    m = apply_mlm_mask(make_batch([34] * 400, 34, V, rng), rng)
    _, _, repl = topk_replace(m, emb, k, rng)
    for orig, r in zip(m.original_ids, repl):
        d = ((emb - emb[orig]) ** 2).sum(1)
        d[:5] = np.inf
        d[orig] = np.inf
        assert r in set(np.argsort(d, kind="stable")[:k].tolist())


def test_noise_zero_sigma_limit(rng):
    emb = nx.Tensor(rng.normal(size=(40, 8)))
    m = apply_mlm_mask(make_batch([20, 15], 20, 40, rng), rng)
    stream, labels, noise = noise_replace(m, emb, 1e-12, rng)
    assert np.allclose(stream.data, emb.data[m.source_ids])
    assert labels.sum() == m.n_selected
    assert (noise[~m.selected] == 0).all()


def test_noise_statistics():
    rng = np.random.default_rng(1)
    H = 64
    emb = nx.Tensor(np.zeros((40, H)))
    m = apply_mlm_mask(make_batch([34] * 2000, 34, 40, rng), rng)
    _, _, noise = noise_replace(m, emb, 1.0, rng)
    eps = noise[m.selected].astype(np.float64)
    assert eps.shape[0] >= 10_000
    assert np.abs(eps.mean(0)).max() < 4 * 1.0 / np.sqrt(eps.shape[0])
    assert (eps**2).sum(1).mean() == pytest.approx(H, rel=0.05)


def test_aux_loss_cases():
    emb = nx.Tensor(np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 0.0], [0.0, 3.0]]))
    assert float(aux_embedding_loss([0], [0], emb).data) == 0.0
    assert float(aux_embedding_loss([0], [1], emb).data) == pytest.approx(25.0)
    assert float(aux_embedding_loss([0, 0], [2, 3], emb).data) == pytest.approx(5.0)


def test_aux_loss_gradient_flows_to_table():
    emb = nx.Tensor(np.array([[0.0, 0.0], [3.0, 4.0]]), requires_grad=True)
    aux_embedding_loss([0], [1], emb).backward()
    assert np.allclose(emb.grad, [[-6.0, -8.0], [6.0, 8.0]])
