"""Seed-deterministic instance generators.

``gen_point_matching`` and ``gen_grid_curvature`` are desk-scale analogs of the
point-matching and curvature-prior stereo problems; ``random_model``,
``random_tree_model`` and ``random_chain_model`` feed the test suites.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import InvalidInputError
from .model import Clique, DensePotential, MrfModel, PatternPotential

__all__ = [
    "gen_point_matching",
    "gen_grid_curvature",
    "grid_chains",
    "random_model",
    "random_tree_model",
    "random_chain_model",
    "random_potential",
]


def _side_lengths(points, tri):
    a, b, c = points[tri[..., 0]], points[tri[..., 1]], points[tri[..., 2]]
    return np.stack(
        [np.linalg.norm(a - b, axis=-1), np.linalg.norm(b - c, axis=-1), np.linalg.norm(c - a, axis=-1)],
        axis=-1,
    )


def _source_triangles(points, rng, per_node=4, neighbors=6):
    n = len(points)
    dist = np.linalg.norm(points[:, None] - points[None], axis=-1)
    tris = []
    seen = set()
    for i in range(n):
        near = [int(j) for j in np.argsort(dist[i], kind="stable") if j != i][: max(2, min(neighbors, n - 1))]
        pairs = [(j, k) for j, k in itertools.permutations(near, 2) if (i, j, k) not in seen]
        pick = rng.choice(len(pairs), size=min(per_node, len(pairs)), replace=False)
        for p in sorted(pick):
            t = (i, *pairs[p])
            seen.add(t)
            tris.append(t)
    return np.array(tris, dtype=np.intp)


def gen_point_matching(n, sigma, k_neighbors, seed=0, unaries="index", unary_scale=1.0):
    """Triangle-matching MRF between a square grid of ``n`` points and a noisy copy.

    Every node has ``n`` labels (target point ids). Each of the ``4n`` source
    triangles becomes a triple clique whose pattern entries are the
    ``k_neighbors`` target triangles closest in side lengths, valued
    ``-exp(-d/gamma)`` with ``gamma`` the mean of those distances; every other
    labeling takes the default 0.

    ``unaries`` is ``"index"`` for ``unary_scale * |i - x_i|`` or ``"zero"``.
    """
    side = math.isqrt(int(n))
    if n < 4 or side * side != n:
        raise InvalidInputError("n must be a perfect square >= 4")
    n_targets = n * (n - 1) * (n - 2)
    if not 1 <= k_neighbors <= n_targets:
        raise InvalidInputError(f"k_neighbors must lie in [1, {n_targets}]")
    if unaries not in ("index", "zero"):
        raise InvalidInputError("unaries must be 'index' or 'zero'")
    rng = np.random.default_rng(seed)
    gx, gy = np.meshgrid(np.arange(side, dtype=float), np.arange(side, dtype=float), indexing="ij")
    source = np.stack([gx.ravel(), gy.ravel()], axis=1)
    target = source + (rng.normal(scale=sigma, size=source.shape) if sigma > 0 else 0.0)

    src_tris = _source_triangles(source, rng)
    tgt_tris = np.array(list(itertools.permutations(range(n), 3)), dtype=np.intp)
    src_len = _side_lengths(source, src_tris)
    tgt_len = _side_lengths(target, tgt_tris)

    cliques = []
    for tri, s_len in zip(src_tris, src_len):
        d = np.sum((tgt_len - s_len) ** 2, axis=1)
        # equal distances resolve toward index-near labelings, then by triangle id
        near = np.abs(tgt_tris - tri).sum(axis=1)
        order = np.lexsort((np.arange(len(d)), near, d))[:k_neighbors]
        chosen = d[order]
        gamma = float(chosen.mean())
        if gamma <= 0.0:
            gamma = 1.0
        vals = -np.exp(-chosen / gamma)
        pot = PatternPotential((n, n, n), 0.0, tgt_tris[order], vals)
        cliques.append(Clique(tuple(int(v) for v in tri), pot))

    if unaries == "index":
        un = [unary_scale * np.abs(i - np.arange(n, dtype=float)) for i in range(n)]
    else:
        un = [np.zeros(n) for _ in range(n)]
    return MrfModel(tuple([n] * n), tuple(un), tuple(cliques))


def gen_grid_curvature(width, height, labels, trunc, unary_scale=1.0, seed=0, noise=0.5):
    """Grid with 1x3 and 3x1 cliques carrying ``min(|x_a - 2 x_b + x_c|, trunc)``.

    Node ``(r, c)`` has id ``r * width + c``. Horizontal cliques come first (row
    by row), then vertical ones (column by column); :func:`grid_chains` lists
    them as one chain per row and per column. Unaries are ``unary_scale * |obs - x|``
    against a noisy smooth surface.
    """
    if width < 3 or height < 3:
        raise InvalidInputError("grid must be at least 3x3")
    if labels < 1:
        raise InvalidInputError("labels must be positive")
    rng = np.random.default_rng(seed)
    lab = np.arange(labels)
    a, b, c = np.meshgrid(lab, lab, lab, indexing="ij")
    table = np.minimum(np.abs(a - 2 * b + c).astype(float), float(trunc))
    mask = table < trunc
    entries = np.stack([a[mask], b[mask], c[mask]], axis=1)
    values = table[mask]

    def pot():
        return PatternPotential((labels,) * 3, float(trunc), entries, values)

    node = lambda r, col: r * width + col  # noqa: E731
    cliques = []
    for r in range(height):
        for col in range(width - 2):
            cliques.append(Clique((node(r, col), node(r, col + 1), node(r, col + 2)), pot()))
    for col in range(width):
        for r in range(height - 2):
            cliques.append(Clique((node(r, col), node(r + 1, col), node(r + 2, col)), pot()))

    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    phase = rng.uniform(0, 2 * np.pi, size=2)
    surface = (labels - 1) / 2 * (1 + 0.8 * np.sin(rr / max(height - 1, 1) * np.pi + phase[0]) * np.cos(cc / max(width - 1, 1) * np.pi + phase[1]))
    obs = np.clip(surface + rng.normal(scale=noise, size=surface.shape), 0, labels - 1).ravel()
    un = [unary_scale * np.abs(o - lab) for o in obs]
    return MrfModel(tuple([labels] * (width * height)), tuple(un), tuple(cliques))


def grid_chains(width, height):
    """Clique-id chains (one per row, then one per column) for :func:`gen_grid_curvature` grids."""
    rows = [[r * (width - 2) + c for c in range(width - 2)] for r in range(height)]
    base = height * (width - 2)
    cols = [[base + c * (height - 2) + r for r in range(height - 2)] for c in range(width)]
    return rows + cols


def random_potential(rng, shape, pattern=False, scale=1.0, density=None):
    """Random dense or pattern potential over ``shape``."""
    if not pattern:
        return DensePotential(scale * rng.normal(size=shape))
    total = int(np.prod(shape))
    if density is None:
        s = int(rng.integers(0, total + 1))
    else:
        s = int(round(density * total))
    flat = rng.choice(total, size=s, replace=False)
    labs = np.stack(np.unravel_index(np.sort(flat), shape), axis=1) if s else np.zeros((0, len(shape)), np.intp)
    return PatternPotential(shape, scale * rng.normal(), labs, scale * rng.normal(size=s))


def random_model(seed, n_nodes=4, n_cliques=3, max_order=3, max_labels=3, pattern_prob=0.3, scale=1.0, min_order=2):
    """Random model with arbitrary (possibly cyclic) clique structure."""
    rng = np.random.default_rng(seed)
    labels = tuple(int(v) for v in rng.integers(2, max_labels + 1, size=n_nodes)) if max_labels >= 2 else (1,) * n_nodes
    un = tuple(scale * rng.normal(size=l) for l in labels)
    cliques = []
    for _ in range(n_cliques):
        k = int(rng.integers(min(min_order, n_nodes), min(max_order, n_nodes) + 1))
        nodes = tuple(int(v) for v in rng.choice(n_nodes, size=k, replace=False))
        shape = tuple(labels[i] for i in nodes)
        cliques.append(Clique(nodes, random_potential(rng, shape, rng.random() < pattern_prob, scale)))
    return MrfModel(labels, un, tuple(cliques))


def random_tree_model(seed, n_nodes=8, max_labels=4, max_order=3, pattern_prob=0.3, scale=1.0):
    """Random model whose factor graph is a tree (cliques pairwise share <= 1 node, no cycles).

    The local-polytope relaxation is tight on such models.
    """
    rng = np.random.default_rng(seed)
    labels = tuple(int(v) for v in rng.integers(2, max_labels + 1, size=n_nodes))
    un = tuple(scale * rng.normal(size=l) for l in labels)
    cliques = []
    k0 = int(rng.integers(2, min(max_order, n_nodes) + 1))
    placed = list(range(k0))
    nodes_list = [tuple(placed)]
    nxt = k0
    while nxt < n_nodes:
        k = int(rng.integers(2, min(max_order, n_nodes - nxt + 1) + 1))
        anchor = int(rng.choice(placed))
        new = list(range(nxt, nxt + k - 1))
        nxt += k - 1
        members = [anchor] + new
        rng.shuffle(members)
        nodes_list.append(tuple(int(v) for v in members))
        placed.extend(new)
    for nodes in nodes_list:
        shape = tuple(labels[i] for i in nodes)
        cliques.append(Clique(nodes, random_potential(rng, shape, rng.random() < pattern_prob, scale)))
    return MrfModel(labels, un, tuple(cliques))


def random_chain_model(seed, n_cliques=3, order=3, overlap=2, max_labels=3, pattern_prob=0.5, scale=1.0):
    """Sliding-window chain: clique t covers nodes [t*(order-overlap), ... + order)."""
    if not 1 <= overlap < order:
        raise InvalidInputError("need 1 <= overlap < order")
    rng = np.random.default_rng(seed)
    step = order - overlap
    n_nodes = step * (n_cliques - 1) + order
    labels = tuple(int(v) for v in rng.integers(2, max_labels + 1, size=n_nodes))
    un = tuple(scale * rng.normal(size=l) for l in labels)
    cliques = []
    for t in range(n_cliques):
        nodes = tuple(range(t * step, t * step + order))
        shape = tuple(labels[i] for i in nodes)
        cliques.append(Clique(nodes, random_potential(rng, shape, rng.random() < pattern_prob, scale)))
    return MrfModel(labels, un, tuple(cliques))
