"""Graph model, text IO, augmentation round trips, and the synthetic
block-model pair generator."""
import numpy as np
import pytest

from diffgda.graphs import (AugmentedGraph, CsbmSpec, DomainShift, Graph,
                            GraphParseError, augment, circle_class_means,
                            gen_csbm_pair, load_graph, recover_labels,
                            save_graph)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


BASIC = [
    "3 2 2",
    "1.0 0.5",
    "-0.25 2.0",
    "0.0 0.0",
    "EDGES 1",
    "0 1",
    "LABELS",
    "0",
    "1",
    "-1",
]


def test_load_basic(tmp_path):
    path = tmp_path / "g.graph"
    write_lines(path, BASIC)
    g = load_graph(path)
    assert g.n == 3 and g.f == 2 and g.c == 2
    assert g.adjacency[0, 1] == 1.0 and g.adjacency[1, 0] == 1.0
    assert g.adjacency.sum() == 2.0
    assert list(g.labels) == [0, 1, -1]
    assert not g.fully_labeled()


def test_load_self_loop_dropped(tmp_path):
    lines = ["6 1 2"] + ["0.0"] * 6 + ["EDGES 2", "5 5", "0 1", "LABELS"] + ["0"] * 6
    path = tmp_path / "g.graph"
    write_lines(path, lines)
    g = load_graph(path)
    assert np.trace(g.adjacency) == 0.0
    assert g.adjacency[5, 5] == 0.0
    assert g.adjacency.sum() == 2.0


def test_load_airport_scale_edge_count(tmp_path):
    # 131 nodes, 241 features, 4 labels, 1074 undirected edges -> 2148 entries
    rng = np.random.default_rng(0)
    n, f, c, m = 131, 241, 4, 1074
    pairs = set()
    while len(pairs) < m:
        u, v = rng.integers(0, n, size=2)
        if u != v:
            pairs.add((min(u, v), max(u, v)))
    lines = [f"{n} {f} {c}"]
    lines += [" ".join("0.0" for _ in range(f)) for _ in range(n)]
    lines.append(f"EDGES {m}")
    lines += [f"{u} {v}" for u, v in sorted(pairs)]
    lines.append("LABELS")
    lines += [str(int(rng.integers(0, c))) for _ in range(n)]
    path = tmp_path / "airportlike.graph"
    write_lines(path, lines)
    g = load_graph(path)
    assert g.n == 131
    assert g.adjacency.sum() == 2 * 1074


@pytest.mark.parametrize("mutate, message", [
    (lambda l: ["3 2"] + l[1:], "header"),
    (lambda l: l[:2] + ["0.5"] + l[3:], "line 3"),
    (lambda l: l[:5] + ["0 9"] + l[6:], "line 6"),
    (lambda l: l[:7] + ["7"] + l[8:], "line 8"),
    (lambda l: l[:4] + ["EDGES x"] + l[5:], "line 5"),
    (lambda l: l[:1] + l[2:], "line"),
])
def test_load_errors_name_lines(tmp_path, mutate, message):
    path = tmp_path / "bad.graph"
    write_lines(path, mutate(list(BASIC)))
    with pytest.raises(GraphParseError) as err:
        load_graph(path)
    assert message in str(err.value)


def test_save_load_round_trip_byte_identical(tmp_path):
    rng = np.random.default_rng(1)
    g = Graph(rng.standard_normal((7, 3)),
              _random_adj(rng, 7, 0.4),
              np.array([0, 1, 2, -1, 1, 0, 2]), 3)
    p1 = tmp_path / "a.graph"
    p2 = tmp_path / "b.graph"
    save_graph(g, p1)
    save_graph(load_graph(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def _random_adj(rng, n, p):
    upper = np.triu(rng.random((n, n)) < p, k=1).astype(np.float64)
    return upper + upper.T


# ---------------------------------------------------------------------------
# Invariants

def test_graph_rejects_asymmetry():
    a = np.zeros((2, 2))
    a[0, 1] = 1.0
    with pytest.raises(ValueError):
        Graph(np.zeros((2, 1)), a, np.zeros(2, dtype=int), 1)


def test_graph_rejects_self_loop():
    a = np.eye(2)
    with pytest.raises(ValueError):
        Graph(np.zeros((2, 1)), a, np.zeros(2, dtype=int), 1)


def test_graph_rejects_bad_labels():
    with pytest.raises(ValueError):
        Graph(np.zeros((2, 1)), np.zeros((2, 2)), np.array([0, 5]), 2)


def test_graph_rejects_nonfinite_features():
    with pytest.raises(ValueError):
        Graph(np.array([[np.nan]]), np.zeros((1, 1)), np.zeros(1, dtype=int), 1)


# ---------------------------------------------------------------------------
# Augmentation

def test_augment_one_hot():
    g = Graph(np.array([[1.0]]), np.zeros((1, 1)), np.array([1]), 2)
    aug = augment(g)
    assert np.array_equal(aug.xt, [[1.0, 0.0, 1.0]])


def test_augment_single_class_constant_column():
    g = Graph(np.zeros((4, 2)), np.zeros((4, 4)), np.zeros(4, dtype=int), 1)
    aug = augment(g)
    assert np.array_equal(aug.xt[:, 2], np.ones(4))


def test_augment_requires_full_labels():
    g = Graph(np.zeros((2, 1)), np.zeros((2, 2)), np.array([0, -1]), 2)
    with pytest.raises(ValueError):
        augment(g)


def test_augment_recover_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n, f, c = int(rng.integers(2, 20)), int(rng.integers(1, 6)), int(rng.integers(1, 5))
        g = Graph(rng.standard_normal((n, f)), _random_adj(rng, n, 0.3),
                  rng.integers(0, c, size=n), c)
        aug = augment(g)
        assert np.array_equal(recover_labels(aug.xt, f, c), g.labels)
        # freshly augmented rows are exactly one-hot
        tail = aug.xt[:, f:]
        assert np.isin(tail, (0.0, 1.0)).all()
        assert np.array_equal(tail.sum(axis=1), np.ones(n))


def test_recover_labels_argmax_and_ties():
    assert recover_labels(np.array([[0.1, 0.9]]), 0, 2)[0] == 1
    assert recover_labels(np.array([[0.5, 0.5]]), 0, 2)[0] == 0
    # one-hot corrupted with small noise keeps the argmax
    noisy = np.array([[0.92, -0.13]])
    brute = max(range(2), key=lambda k: (noisy[0, k], -k))
    assert recover_labels(noisy, 0, 2)[0] == brute == 0


def test_recover_labels_rejects_nonfinite():
    with pytest.raises(ValueError):
        recover_labels(np.array([[np.inf, 0.0]]), 0, 2)


def test_recover_labels_requires_classes():
    with pytest.raises(ValueError):
        recover_labels(np.ones((1, 2)), 2, 0)


# ---------------------------------------------------------------------------
# CSBM generator

def _spec(**kw):
    base = dict(n=40, c=2, intra_p=0.3, inter_q=0.05,
                class_means=circle_class_means(2, 4), feature_std=1.0)
    base.update(kw)
    return CsbmSpec(**base)


def test_csbm_deterministic():
    spec = _spec(shift=DomainShift(30.0, 0.05, 0.0))
    s1, t1 = gen_csbm_pair(spec, 7)
    s2, t2 = gen_csbm_pair(spec, 7)
    assert np.array_equal(s1.features, s2.features)
    assert np.array_equal(s1.adjacency, s2.adjacency)
    assert np.array_equal(t1.features, t2.features)
    assert np.array_equal(t1.adjacency, t2.adjacency)
    assert np.array_equal(t1.labels, t2.labels)


def test_csbm_two_cliques_when_deterministic_probs():
    spec = CsbmSpec(n=4, c=2, intra_p=1.0, inter_q=0.0,
                    class_means=circle_class_means(2, 2), feature_std=1.0)
    source, _ = gen_csbm_pair(spec, 0)
    for i in range(4):
        for j in range(4):
            expected = 1.0 if (i != j and source.labels[i] == source.labels[j]) else 0.0
            assert source.adjacency[i, j] == expected


def test_csbm_intra_density_monte_carlo():
    spec = _spec(n=200, intra_p=0.3, inter_q=0.05)
    rates = []
    for seed in range(20):
        source, _ = gen_csbm_pair(spec, seed)
        same = source.labels[:, None] == source.labels[None, :]
        np.fill_diagonal(same, False)
        rates.append(source.adjacency[same].mean())
    assert abs(np.mean(rates) - 0.3) < 0.05


def test_csbm_invariants_many_specs():
    rng = np.random.default_rng(3)
    for i in range(100):
        c = int(rng.integers(1, 5))
        f = int(rng.integers(2, 6))
        q = float(rng.uniform(0.0, 0.5))
        p = float(rng.uniform(q, 1.0))
        spec = CsbmSpec(n=int(rng.integers(2, 30)), c=c, intra_p=p, inter_q=q,
                        class_means=rng.standard_normal((c, f)),
                        feature_std=float(rng.uniform(0.1, 2.0)),
                        shift=DomainShift(float(rng.uniform(-90, 90)),
                                          float(rng.uniform(-0.1, 0.1)),
                                          float(rng.uniform(-0.05, 0.05))))
        source, target = gen_csbm_pair(spec, i)
        for g in (source, target):
            g.validate()
            assert g.fully_labeled()


def test_csbm_zero_shift_same_distribution():
    spec = _spec(n=400, shift=DomainShift())
    source, target = gen_csbm_pair(spec, 11)
    # same model: per-class feature means and edge densities agree closely
    for k in range(spec.c):
        mu_s = source.features[source.labels == k].mean(axis=0)
        mu_t = target.features[target.labels == k].mean(axis=0)
        assert np.abs(mu_s - mu_t).max() < 0.35
    assert abs(source.adjacency.mean() - target.adjacency.mean()) < 0.02


def test_csbm_rejects_bad_spec():
    with pytest.raises(ValueError):
        _spec(intra_p=0.1, inter_q=0.3)
    with pytest.raises(ValueError):
        _spec(feature_std=0.0)
    with pytest.raises(ValueError):
        CsbmSpec(n=4, c=3, intra_p=0.5, inter_q=0.1,
                 class_means=np.zeros((2, 3)), feature_std=1.0)


def test_augmented_graph_width_check():
    with pytest.raises(ValueError):
        AugmentedGraph(np.zeros((3, 4)), np.zeros((3, 3)), f=2, c=1)
