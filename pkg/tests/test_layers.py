"""Layer-level oracles: closed-form cases, a hand-computed attention map,
permutation equivariance, and finite-difference gradient integrity."""
import numpy as np
import pytest

from diffgda import autodiff as ad
from diffgda.autodiff import Tensor
from diffgda.checkpoint import load_checkpoint, save_checkpoint
from diffgda.layers import (GmhParams, MlpParams, attention_mask,
                            bce_with_logits, cross_entropy, dropout_mask,
                            finite_diff_grad, gcn_layer, gcn_norm,
                            gmh_attention, init_gmh, init_gnn, init_mlp,
                            max_rel_error, mlp_apply, mlp_from_state,
                            mlp_state)


# ---------------------------------------------------------------------------
# MLP

def test_mlp_identity_layer():
    p = MlpParams([Tensor(np.eye(3))], [Tensor(np.zeros(3))])
    x = np.random.default_rng(0).standard_normal((4, 3))
    assert np.array_equal(mlp_apply(p, x).value, x)


def test_mlp_zero_weights_bias_rows():
    b = np.array([1.0, -2.0])
    p = MlpParams([Tensor(np.zeros((3, 2)))], [Tensor(b)])
    out = mlp_apply(p, np.ones((5, 3))).value
    assert np.array_equal(out, np.tile(b, (5, 1)))


def test_mlp_dimension_mismatch():
    p = MlpParams([Tensor(np.zeros((3, 2)))], [Tensor(np.zeros(2))])
    with pytest.raises(ValueError):
        mlp_apply(p, np.ones((5, 4)))


def test_mlp_heads_positive_and_unit():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((6, 3))
    soft = mlp_apply(init_mlp(rng, [3, 4, 1], head="softplus"), x).value
    assert (soft > 0.0).all()
    sig = mlp_apply(init_mlp(rng, [3, 4, 1], head="sigmoid"), x).value
    assert ((sig > 0.0) & (sig < 1.0)).all()


def _safe_mlp_instance(seed):
    """Random 2-layer net + input with all ReLU preactivations clear of 0."""
    rng = np.random.default_rng(seed)
    while True:
        p = init_mlp(rng, [3, 4, 2])
        x = rng.standard_normal((5, 3))
        pre = x @ p.weights[0].value + p.biases[0].value
        if np.abs(pre).min() > 1e-3:
            return p, x


def test_mlp_gradient_matches_finite_differences():
    for seed in range(5):
        p, x = _safe_mlp_instance(seed)
        params = p.tensors()

        def loss():
            return ad.tsum(ad.square(mlp_apply(p, x))).item()

        out = ad.tsum(ad.square(mlp_apply(p, x)))
        out.backward()
        analytic = [q.grad for q in params]
        numeric = finite_diff_grad(loss, params, 1e-5)
        assert max_rel_error(analytic, numeric) < 1e-4


# ---------------------------------------------------------------------------
# GCN

def test_gcn_single_node_no_edges():
    rng = np.random.default_rng(2)
    h = np.abs(rng.standard_normal((1, 3)))
    w = rng.standard_normal((3, 2))
    out = gcn_layer(h, np.zeros((1, 1)), Tensor(w)).value
    assert np.allclose(out, np.maximum(h @ w, 0.0))


def test_gcn_isolated_nodes_identity_weights():
    h = np.array([[1.0, 2.0], [3.0, 0.5]])
    out = gcn_layer(h, np.zeros((2, 2)), Tensor(np.eye(2))).value
    assert np.array_equal(out, h)


def test_gcn_path_graph_oracle():
    # path 0-1-2, one-hot rows, identity weights; degrees+self-loop (2,3,2)
    a = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    h = np.eye(3)
    out = gcn_layer(h, a, Tensor(np.eye(3))).value
    expected_row1 = np.array([1.0 / np.sqrt(6.0), 1.0 / 3.0, 1.0 / np.sqrt(6.0)])
    assert np.allclose(out[1], expected_row1, atol=1e-15)
    # independent oracle: explicit normalized-adjacency multiply
    a_hat = a + np.eye(3)
    d = np.diag(1.0 / np.sqrt(a_hat.sum(1)))
    assert np.allclose(out, np.maximum(d @ a_hat @ d @ h, 0.0), atol=1e-15)


def test_gcn_dimension_mismatch():
    with pytest.raises(ValueError):
        gcn_layer(np.ones((3, 2)), np.zeros((4, 4)), Tensor(np.eye(2)))


def _dyadic_clique_graph(rng, cliques: int, isolated: int):
    """Disjoint 4-cliques plus isolated nodes: degrees+self-loop in {1, 4},
    so every normalization factor is a dyadic rational."""
    n = 4 * cliques + isolated
    a = np.zeros((n, n))
    for k in range(cliques):
        idx = np.arange(4 * k, 4 * k + 4)
        a[np.ix_(idx, idx)] = 1.0
    np.fill_diagonal(a, 0.0)
    perm0 = rng.permutation(n)
    return a[np.ix_(perm0, perm0)]


def test_gcn_permutation_equivariance_exact():
    rng = np.random.default_rng(7)
    for _ in range(10):
        a = _dyadic_clique_graph(rng, cliques=3, isolated=2)
        n = a.shape[0]
        h = rng.integers(-8, 9, size=(n, 5)) / 8.0  # dyadic entries
        w = rng.integers(-8, 9, size=(5, 4)) / 4.0
        out = gcn_layer(h, a, Tensor(w)).value
        perm = rng.permutation(n)
        a_p = a[np.ix_(perm, perm)]
        out_p = gcn_layer(h[perm], a_p, Tensor(w)).value
        assert np.array_equal(out_p, out[perm])


def test_gcn_norm_row_content():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    norm = gcn_norm(a)
    assert np.allclose(norm, np.full((2, 2), 0.5))


# ---------------------------------------------------------------------------
# GMH attention

def test_gmh_single_node_weight_one():
    rng = np.random.default_rng(3)
    p = init_gmh(rng, [2], heads=1, head_dim=2)
    h = rng.standard_normal((1, 2))
    out = gmh_attention(p, [Tensor(h)], [np.zeros((1, 1))]).value
    # attention over the single self pair is exactly 1
    v = h @ p.wv[0][0].value
    expected = p.proj_w.value[0] * (v @ v.T) / 2.0 + p.proj_b.value
    assert np.allclose(out, expected, atol=1e-15)


def test_gmh_degenerate_mask_self_only():
    rng = np.random.default_rng(4)
    p = init_gmh(rng, [3], heads=2, head_dim=2)
    h = rng.standard_normal((4, 3))
    out = gmh_attention(p, [Tensor(h)], [np.zeros((4, 4))]).value
    expected = np.zeros((4, 4))
    for hd in range(2):
        v = h @ p.wv[0][hd].value
        att = np.eye(4)  # each node attends only to itself
        expected += p.proj_w.value[hd] * att * (v @ v.T) / 2.0
    expected += p.proj_b.value
    assert np.allclose(np.diag(out), np.diag(expected), atol=1e-12)
    off = ~np.eye(4, dtype=bool)
    assert np.allclose(out[off], np.full(12, p.proj_b.value[0]), atol=1e-15)


def test_gmh_full_mask_manual_oracle():
    """n=3, full mask: compare against a direct per-entry computation."""
    rng = np.random.default_rng(5)
    heads, head_dim = 2, 2
    p = init_gmh(rng, [3, 3], heads=heads, head_dim=head_dim)
    h0 = rng.standard_normal((3, 3))
    h1 = rng.standard_normal((3, 3))
    full = np.ones((3, 3))
    out = gmh_attention(p, [Tensor(h0), Tensor(h1)], [full]).value

    expected = np.full((3, 3), p.proj_b.value[0])
    for b, h in enumerate((h0, h1)):
        for hd in range(heads):
            q = h @ p.wq[b][hd].value
            k = h @ p.wk[b][hd].value
            v = h @ p.wv[b][hd].value
            logits = q @ k.T / np.sqrt(head_dim)
            att = np.empty((3, 3))
            for i in range(3):
                e = np.exp(logits[i] - logits[i].max())
                att[i] = e / e.sum()
            expected += p.proj_w.value[b * heads + hd] * att * (v @ v.T) / head_dim
    assert np.abs(out - expected).max() < 1e-12


def test_gmh_attention_rows_sum_to_one():
    rng = np.random.default_rng(6)
    n = 6
    a = (rng.random((n, n)) < 0.4).astype(float)
    a = np.triu(a, 1)
    a = a + a.T
    mask = attention_mask(a)
    logits = Tensor(rng.standard_normal((n, n)))
    att = ad.masked_softmax(logits, mask).value
    sums = att.sum(axis=1)
    assert np.allclose(sums[mask.any(axis=1)], 1.0)


def test_gmh_rejects_empty_and_mismatched():
    rng = np.random.default_rng(8)
    p = init_gmh(rng, [2], heads=1, head_dim=2)
    with pytest.raises(ValueError):
        gmh_attention(p, [], [np.zeros((1, 1))])
    with pytest.raises(ValueError):
        gmh_attention(p, [Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 2)))],
                      [np.zeros((2, 2))])


def test_gmh_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    # 2 hidden states x 2 adjacency powers -> 4 weight blocks
    p = init_gmh(rng, [2, 2, 2, 2], heads=2, head_dim=2)
    h0 = rng.standard_normal((3, 2))
    h1 = rng.standard_normal((3, 2))
    a = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    params = p.tensors()

    def loss():
        out = gmh_attention(p, [Tensor(h0), Tensor(h1)], [a, a @ a])
        return ad.tsum(ad.square(out)).item()

    out = gmh_attention(p, [Tensor(h0), Tensor(h1)], [a, a @ a])
    ad.tsum(ad.square(out)).backward()
    analytic = [q.grad if q.grad is not None else np.zeros_like(q.value)
                for q in params]
    numeric = finite_diff_grad(loss, params, 1e-5)
    assert max_rel_error(analytic, numeric) < 1e-4


# ---------------------------------------------------------------------------
# Losses and dropout

def test_cross_entropy_matches_manual():
    logits = Tensor(np.array([[2.0, 0.5, -1.0], [0.0, 1.0, 0.0]]))
    labels = np.array([0, 2])
    got = cross_entropy(logits, labels).item()
    manual = 0.0
    for row, lab in zip(logits.value, labels):
        e = np.exp(row - row.max())
        manual -= np.log(e[lab] / e.sum())
    assert np.isclose(got, manual / 2.0, atol=1e-12)


def test_bce_with_logits_matches_manual():
    z = Tensor(np.array([0.3, -1.2, 2.0]))
    t = np.array([1.0, 0.0, 1.0])
    got = bce_with_logits(z, t).item()
    y = 1.0 / (1.0 + np.exp(-z.value))
    manual = -(t * np.log(y) + (1 - t) * np.log(1 - y)).mean()
    assert np.isclose(got, manual, atol=1e-12)


def test_dropout_rate_zero_is_identity():
    rng = np.random.default_rng(10)
    mask = dropout_mask(rng, (4, 5), 0.0)
    assert np.array_equal(mask, np.ones((4, 5)))


def test_dropout_scales_kept_units():
    rng = np.random.default_rng(11)
    mask = dropout_mask(rng, (1000, 10), 0.2)
    assert set(np.unique(mask)) == {0.0, 1.0 / 0.8}
    assert abs(mask.mean() - 1.0) < 0.05


# ---------------------------------------------------------------------------
# finite_diff_grad oracle itself

def test_finite_diff_quadratic():
    p = Tensor(np.array([1.0, 2.0]))
    grads = finite_diff_grad(lambda: float((p.value ** 2).sum()), [p], 1e-5)
    assert np.allclose(grads[0], [2.0, 4.0], atol=1e-8)


def test_finite_diff_constant():
    p = Tensor(np.array([1.0, 2.0]))
    grads = finite_diff_grad(lambda: 7.0, [p], 1e-5)
    assert np.allclose(grads[0], 0.0, atol=1e-12)


def test_finite_diff_nonfinite_loss():
    p = Tensor(np.array([0.0]))
    with pytest.raises(FloatingPointError):
        finite_diff_grad(lambda: float("nan"), [p], 1e-5)


# ---------------------------------------------------------------------------
# Checkpoint round trip

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    tensors = {
        "w": rng.standard_normal((3, 4)),
        "nested.name.b": rng.standard_normal(7),
        "scalar": np.array(3.5),
    }
    path = tmp_path / "params.ckpt"
    save_checkpoint(path, tensors)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert np.array_equal(loaded[name], tensors[name])
        assert loaded[name].shape == tensors[name].shape


def test_checkpoint_magic_guard(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_mlp_state_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    p = init_mlp(rng, [3, 5, 2], head="softplus")
    state = mlp_state("q", p)
    path = tmp_path / "mlp.ckpt"
    save_checkpoint(path, state)
    q = mlp_from_state(load_checkpoint(path), "q", head="softplus")
    x = rng.standard_normal((4, 3))
    assert np.array_equal(mlp_apply(p, x).value, mlp_apply(q, x).value)
