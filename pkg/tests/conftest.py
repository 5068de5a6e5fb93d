import numpy as np

from diffgda.graphs import Graph


def edgeless_graph(features: np.ndarray, c: int = 1,
                   labels: np.ndarray | None = None) -> Graph:
    """Graph with no edges; default labels are all class 0."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = features.shape[0]
    if labels is None:
        labels = np.zeros(n, dtype=np.int64)
    return Graph(features, np.zeros((n, n)), labels, c)


def random_graph(rng: np.random.Generator, n: int, f: int, c: int,
                 p: float = 0.3) -> Graph:
    upper = np.triu(rng.random((n, n)) < p, k=1).astype(np.float64)
    return Graph(rng.standard_normal((n, f)), upper + upper.T,
                 rng.integers(0, c, size=n), c)
