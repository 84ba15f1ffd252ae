import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerate_energy, enumerate_map
from trnmrf.errors import CapacityError, InvalidDecompositionError, InvalidInputError, ParseError
from trnmrf.generators import gen_grid_curvature, gen_point_matching, random_model, random_potential
from trnmrf.model import (
    Clique,
    DensePotential,
    MrfModel,
    PatternPotential,
    brute_force_map,
    build_chain_decomposition,
    build_clique_decomposition,
    dumps_model,
    energy,
    greedy_chain_decomposition,
    load_model,
    loads_model,
    save_model,
)


def zero_model(labels, cliques):
    un = tuple(np.zeros(l) for l in labels)
    cl = tuple(Clique(tuple(c), DensePotential(np.zeros([labels[i] for i in c]))) for c in cliques)
    return MrfModel(tuple(labels), un, cl)


# ---------------------------------------------------------------- energy

def test_energy_of_zero_potentials_is_zero():
    m = zero_model((3, 2, 4), [(0, 1, 2), (1, 2)])
    for x in itertools.product(range(3), range(2), range(4)):
        assert energy(m, x) == 0.0


def test_energy_two_node_table_lookup():
    m = MrfModel((2, 2), (np.array([0.0, 1.0]), np.array([2.0, 0.0])), (Clique((0, 1), DensePotential(np.zeros((2, 2)))),))
    assert energy(m, (0, 1)) == 0.0


def test_energy_matches_table_resummation():
    rng = np.random.default_rng(3)
    table = rng.normal(size=(2, 3, 4))
    un = tuple(rng.normal(size=l) for l in (2, 3, 4))
    m = MrfModel((2, 3, 4), un, (Clique((0, 1, 2), DensePotential(table)),))
    for x in itertools.product(range(2), range(3), range(4)):
        expected = table[x] + un[0][x[0]] + un[1][x[1]] + un[2][x[2]]
        assert energy(m, x) == pytest.approx(expected, abs=1e-12)


def test_energy_rejects_out_of_range_labels():
    m = zero_model((2, 2), [(0, 1)])
    with pytest.raises(InvalidInputError):
        energy(m, (0, 2))
    with pytest.raises(InvalidInputError):
        energy(m, (0,))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_pattern_lookup_equals_densified_energy(seed):
    m = random_model(seed, n_nodes=4, n_cliques=3, pattern_prob=0.8)
    dense = m.densified()
    for x in itertools.product(*[range(l) for l in m.labels]):
        assert energy(m, x) == energy(dense, x)


def test_pattern_potential_default_lookup():
    pot = PatternPotential((2, 2), 5.0, [(0, 1)], [-1.0])
    assert pot.value((0, 1)) == -1.0
    assert pot.value((1, 1)) == 5.0
    assert pot.size == 1


def test_pattern_potential_rejects_bad_entries():
    with pytest.raises(InvalidInputError):
        PatternPotential((2, 2), 0.0, [(0, 1), (0, 1)], [1.0, 2.0])
    with pytest.raises(InvalidInputError):
        PatternPotential((2, 2), 0.0, [(0, 2)], [1.0])


def test_model_invariants():
    with pytest.raises(InvalidInputError):
        MrfModel((2, 2), (np.zeros(2), np.zeros(3)))
    with pytest.raises(InvalidInputError):
        zero_model((2, 2), [(0, 0)])
    with pytest.raises(InvalidInputError):
        MrfModel((2, 2), (np.zeros(2), np.zeros(2)), (Clique((0, 5), DensePotential(np.zeros((2, 2)))),))


# ---------------------------------------------------------------- brute force

def test_brute_force_single_node():
    m = MrfModel((3,), (np.array([3.0, 1.0, 2.0]),))
    x, e = brute_force_map(m)
    assert list(x) == [1] and e == 1.0


def test_brute_force_zero_potentials():
    m = zero_model((2, 3), [(0, 1)])
    x, e = brute_force_map(m)
    assert e == 0.0 and energy(m, x) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_brute_force_matches_independent_enumeration(seed):
    rng = np.random.default_rng(seed)
    cliques = (
        Clique((0, 1, 2), random_potential(rng, (3, 3, 3), pattern=True)),
        Clique((2, 3), random_potential(rng, (3, 3))),
        Clique((3, 0), random_potential(rng, (3, 3))),
    )
    m = MrfModel((3,) * 4, tuple(rng.normal(size=3) for _ in range(4)), cliques)
    x, e = brute_force_map(m)
    _, e_ref = enumerate_map(m)
    assert e == pytest.approx(e_ref, abs=1e-12)
    assert energy(m, x) == pytest.approx(e_ref, abs=1e-12)


def test_brute_force_capacity():
    m = zero_model((10,) * 8, [])
    with pytest.raises(CapacityError):
        brute_force_map(m)


# ---------------------------------------------------------------- decompositions

def test_clique_decomposition_counts():
    m = random_model(1, n_nodes=5, n_cliques=5)
    d = build_clique_decomposition(m)
    assert len(d.subgraphs) == 5 and d.is_singleton
    assert build_clique_decomposition(zero_model((2,), [])).subgraphs == ()
    g = gen_grid_curvature(4, 3, 2, 2.0)
    assert len(build_clique_decomposition(g).subgraphs) == g.clique_count


def test_chain_decomposition_row():
    m = zero_model((2,) * 5, [(0, 1, 2), (1, 2, 3), (2, 3, 4)])
    d = build_chain_decomposition(m, [[0, 1, 2]])
    assert len(d.subgraphs) == 1
    assert d.subgraphs[0].separators == ((1, 2), (2, 3))


def test_chain_decomposition_two_chains_and_errors():
    m = zero_model((2,) * 6, [(0, 1), (1, 2), (3, 4), (4, 5)])
    assert len(build_chain_decomposition(m, [[0, 1], [2, 3]]).subgraphs) == 2
    with pytest.raises(InvalidDecompositionError):
        build_chain_decomposition(m, [[0, 2], [1, 3]])
    with pytest.raises(InvalidDecompositionError):
        build_chain_decomposition(m, [[0, 1], [1, 2, 3]])
    with pytest.raises(InvalidDecompositionError):
        build_chain_decomposition(m, [[0, 1], [2]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_greedy_separators_are_intersections(seed):
    m = random_model(seed, n_nodes=5, n_cliques=5)
    d = greedy_chain_decomposition(m)
    assert sorted(d.clique_ids) == list(range(m.clique_count))
    for sub in d.subgraphs:
        for t, sep in enumerate(sub.separators):
            a, b = m.cliques[sub.cliques[t]].nodes, m.cliques[sub.cliques[t + 1]].nodes
            assert set(sep) == set(a) & set(b)


# ---------------------------------------------------------------- generators

def test_point_matching_structure():
    m = gen_point_matching(4, 0.0, 5, seed=0)
    assert m.clique_count == 16
    assert all(cl.potential.size == 5 for cl in m.cliques)
    assert all(cl.potential.default == 0.0 for cl in m.cliques)


def test_point_matching_noise_free_identity():
    m = gen_point_matching(4, 0.0, 6, seed=1)
    x, _ = brute_force_map(m)
    assert list(x) == [0, 1, 2, 3]


def test_point_matching_rejects_bad_n():
    with pytest.raises(InvalidInputError):
        gen_point_matching(5, 0.0, 3)


def test_curvature_untruncated_values():
    m = gen_grid_curvature(3, 3, 2, 100.0)
    assert m.clique_count == 6
    for cl in m.cliques:
        for x in itertools.product(range(2), repeat=3):
            assert cl.potential.value(x) == abs(x[0] - 2 * x[1] + x[2])


def test_curvature_pattern_counts():
    m = gen_grid_curvature(3, 4, 5, 2.0)
    below = sum(1 for a, b, c in itertools.product(range(5), repeat=3) if abs(a - 2 * b + c) < 2.0)
    for cl in m.cliques:
        assert cl.potential.size == below
        for x in itertools.product(range(5), repeat=3):
            assert cl.potential.value(x) == min(abs(x[0] - 2 * x[1] + x[2]), 2.0)


# ---------------------------------------------------------------- file format

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_round_trip_is_identity(seed):
    m = random_model(seed, n_nodes=4, n_cliques=3, pattern_prob=0.5)
    back = loads_model(dumps_model(m))
    assert back.labels == m.labels
    for u, v in zip(m.unaries, back.unaries):
        assert np.array_equal(u, v)
    assert len(back.cliques) == len(m.cliques)
    for a, b in zip(m.cliques, back.cliques):
        assert a.nodes == b.nodes and a.potential == b.potential
        assert a.potential.kind == b.potential.kind


def test_save_load_file(tmp_path):
    m = random_model(7, pattern_prob=0.5)
    path = tmp_path / "m.mrf"
    save_model(m, path)
    assert dumps_model(load_model(path)) == dumps_model(m)


def test_truncated_file_reports_line():
    text = dumps_model(random_model(2))
    cut = "\n".join(text.splitlines()[:-2])
    with pytest.raises(ParseError) as info:
        loads_model(cut)
    assert info.value.line is not None


def test_unknown_potential_kind():
    text = "HOMRF 1\n2\n2 2\n0 0\n0 0\n1\n2 0 1 SPARSE 0\n"
    with pytest.raises(ParseError):
        loads_model(text)


def test_independent_energy_oracle_agrees():
    m = random_model(11, pattern_prob=0.5)
    for x in itertools.product(*[range(l) for l in m.labels]):
        assert energy(m, x) == pytest.approx(enumerate_energy(m, x), abs=1e-12)
