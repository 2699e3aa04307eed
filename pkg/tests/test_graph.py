import numpy as np
import pytest

from kgpathrec import graph as g
from kgpathrec.errors import DataError
from kgpathrec.synthetic import SynthConfig, generate_synthetic


def write(path, text):
    path.write_text(text, encoding="utf-8")


@pytest.fixture
def toy_dir(tmp_path):
    write(tmp_path / "entities.tsv",
          "u1\tuser\nu2\tuser\ni1\titem\ni2\titem\ni3\titem\n"
          "b1\tbrand\nf1\tfeature\n")
    write(tmp_path / "triples.tsv",
          "u1\tpurchase\ti1\n"
          "u2\tpurchase\ti2\n"
          "i1\talso_bought\ti2\n"
          "i2\talso_viewed\ti3\n"
          "i1\tproduced_by\tb1\n"
          "i3\tdescribed_by\tf1\n"
          "u1\tmention\tf1\n")
    write(tmp_path / "categories.tsv",
          "i1\tcats\ni2\tdogs\ni3\tdogs\n")
    return tmp_path


def load_toy(toy_dir):
    return g.load_knowledge_graph(toy_dir / "triples.tsv",
                                  toy_dir / "entities.tsv")


def test_inverse_closure_contains_reverse_purchase(toy_dir):
    kg = load_toy(toy_dir)
    u1 = kg.entity("u1").id
    i1 = kg.entity("i1").id
    inv = kg.relation("purchase_inv").id
    assert kg.has_triple(i1, inv, u1)
    # inverse of inverse is the forward relation
    assert kg.relations[kg.relations[inv].inverse_id].name == "purchase"


def test_empty_triple_file(tmp_path):
    write(tmp_path / "entities.tsv", "u1\tuser\n")
    write(tmp_path / "triples.tsv", "")
    kg = g.load_knowledge_graph(tmp_path / "triples.tsv",
                                tmp_path / "entities.tsv")
    assert kg.n_entities == 1
    assert kg.triples == []
    assert kg.outgoing(0) == ()


def test_adjacency_degree_sums_equal_twice_triples(toy_dir):
    kg = load_toy(toy_dir)
    closed = len(kg.triples)
    assert closed == 2 * len(kg.forward_triples)
    out_deg = sum(len(kg.outgoing(e.id)) for e in kg.entities)
    in_deg = sum(len(kg.incoming(e.id)) for e in kg.entities)
    assert out_deg == closed
    assert in_deg == closed


def test_duplicate_triples_deduplicated(tmp_path):
    write(tmp_path / "entities.tsv", "u1\tuser\ni1\titem\n")
    write(tmp_path / "triples.tsv",
          "u1\tpurchase\ti1\nu1\tpurchase\ti1\n")
    kg = g.load_knowledge_graph(tmp_path / "triples.tsv",
                                tmp_path / "entities.tsv")
    assert kg.duplicates_dropped == 1
    assert len(kg.forward_triples) == 1


def test_unknown_entity_token(tmp_path):
    write(tmp_path / "entities.tsv", "u1\tuser\n")
    write(tmp_path / "triples.tsv", "u1\tpurchase\tghost\n")
    with pytest.raises(DataError, match="ghost"):
        g.load_knowledge_graph(tmp_path / "triples.tsv",
                               tmp_path / "entities.tsv")


def test_unknown_relation_with_closed_vocabulary(tmp_path):
    write(tmp_path / "entities.tsv", "i1\titem\ni2\titem\n")
    write(tmp_path / "triples.tsv", "i1\tweird_rel\ti2\n")
    with pytest.raises(DataError, match="weird_rel"):
        g.load_knowledge_graph(tmp_path / "triples.tsv",
                               tmp_path / "entities.tsv",
                               allowed_relations=g.DEFAULT_RELATIONS)


def test_self_referential_purchase_rejected(tmp_path):
    write(tmp_path / "entities.tsv", "u1\tuser\ni1\titem\n")
    write(tmp_path / "triples.tsv", "u1\tpurchase\tu1\n")
    with pytest.raises(DataError):
        g.load_knowledge_graph(tmp_path / "triples.tsv",
                               tmp_path / "entities.tsv")


def test_purchase_must_connect_user_to_item(tmp_path):
    write(tmp_path / "entities.tsv", "i1\titem\ni2\titem\n")
    write(tmp_path / "triples.tsv", "i1\tpurchase\ti2\n")
    with pytest.raises(DataError):
        g.load_knowledge_graph(tmp_path / "triples.tsv",
                               tmp_path / "entities.tsv")


def test_malformed_row_reports_line_number(tmp_path):
    write(tmp_path / "entities.tsv", "u1\tuser\n")
    write(tmp_path / "triples.tsv", "u1\tpurchase\n")
    with pytest.raises(DataError, match="line 1"):
        g.load_knowledge_graph(tmp_path / "triples.tsv",
                               tmp_path / "entities.tsv")


# -- category graph ----------------------------------------------------------


def test_category_edge_witnessed_by_relation(toy_dir):
    kg = load_toy(toy_dir)
    assignment = g.load_category_assignment(toy_dir / "categories.tsv", kg)
    cgraph = g.build_category_graph(kg, assignment)
    cats, dogs = 0, 1
    assert cgraph.has_edge(cats, dogs)
    ab = kg.relation("also_bought").id
    assert ab in cgraph.witnesses[(cats, dogs)]
    # i2 -> i3 links dogs to dogs: a self-edge
    assert cgraph.has_edge(dogs, dogs)


def test_no_cross_category_triples_no_cross_edges(tmp_path):
    write(tmp_path / "entities.tsv", "u1\tuser\ni1\titem\ni2\titem\n")
    write(tmp_path / "triples.tsv", "u1\tpurchase\ti1\nu1\tpurchase\ti2\n")
    write(tmp_path / "categories.tsv", "i1\ta\ni2\tb\n")
    kg = g.load_knowledge_graph(tmp_path / "triples.tsv",
                                tmp_path / "entities.tsv")
    assignment = g.load_category_assignment(tmp_path / "categories.tsv", kg)
    cgraph = g.build_category_graph(kg, assignment)
    assert cgraph.edges() == []


def brute_force_category_edges(kg, assignment):
    edges = {}
    for h, r, t in kg.triples:
        if kg.is_item(h) and kg.is_item(t):
            for ca in assignment.item_categories[h]:
                for cb in assignment.item_categories[t]:
                    edges.setdefault((ca, cb), set()).add(r)
    return {k: frozenset(v) for k, v in edges.items()}


def test_category_graph_matches_brute_force_on_random_graphs():
    for seed in range(4):
        res = generate_synthetic(SynthConfig(users=10, categories=5,
                                             items_per_category=4,
                                             planted_pairs=6,
                                             cross_links=12), seed=seed)
        assert res.kg.n_entities <= 500
        cgraph = g.build_category_graph(res.kg, res.assignment)
        expected = brute_force_category_edges(res.kg, res.assignment)
        assert cgraph.witnesses == expected


def test_item_without_category_rejected(toy_dir):
    kg = load_toy(toy_dir)
    write(toy_dir / "bad_categories.tsv", "i1\tcats\n")
    with pytest.raises(DataError):
        g.load_category_assignment(toy_dir / "bad_categories.tsv", kg)


# -- one-hop category neighbors ----------------------------------------------


def test_isolated_item_returns_own_category(tmp_path):
    write(tmp_path / "entities.tsv", "u1\tuser\ni1\titem\n")
    write(tmp_path / "triples.tsv", "u1\tpurchase\ti1\n")
    write(tmp_path / "categories.tsv", "i1\tc3\n")
    kg = g.load_knowledge_graph(tmp_path / "triples.tsv",
                                tmp_path / "entities.tsv")
    assignment = g.load_category_assignment(tmp_path / "categories.tsv", kg)
    item = kg.entity("i1").id
    assert g.item_category_neighbors(kg, assignment, item) == (0,)


def test_category_neighbors_hand_fixture(tmp_path):
    write(tmp_path / "entities.tsv",
          "i1\titem\ni2\titem\ni3\titem\n")
    write(tmp_path / "triples.tsv",
          "i1\talso_viewed\ti2\ni1\talso_viewed\ti3\n")
    write(tmp_path / "categories.tsv", "i1\tC1\ni2\tC1\ni3\tC2\n")
    kg = g.load_knowledge_graph(tmp_path / "triples.tsv",
                                tmp_path / "entities.tsv")
    assignment = g.load_category_assignment(tmp_path / "categories.tsv", kg)
    item = kg.entity("i1").id
    assert g.item_category_neighbors(kg, assignment, item) == (0, 1)


def test_category_neighbors_not_item_rejected(toy_dir):
    kg = load_toy(toy_dir)
    assignment = g.load_category_assignment(toy_dir / "categories.tsv", kg)
    with pytest.raises(DataError):
        g.item_category_neighbors(kg, assignment, kg.entity("u1").id)


def test_category_neighbors_match_brute_force():
    res = generate_synthetic(SynthConfig(users=8, categories=4,
                                         items_per_category=5,
                                         planted_pairs=4), seed=3)
    kg, assignment = res.kg, res.assignment
    for item in kg.entities_of_kind("item"):
        expected = set(assignment.item_categories[item])
        for h, r, t in kg.triples:
            if h == item and kg.is_item(t):
                expected |= set(assignment.item_categories[t])
            if t == item and kg.is_item(h):
                expected |= set(assignment.item_categories[h])
        assert g.item_category_neighbors(kg, assignment, item) == \
            tuple(sorted(expected))


# -- interaction split ---------------------------------------------------------


def make_purchase_kg(n_items, tmp_path):
    lines = [f"i{k}\titem" for k in range(n_items)]
    write(tmp_path / "entities.tsv", "u1\tuser\n" + "\n".join(lines) + "\n")
    rows = [f"u1\tpurchase\ti{k}" for k in range(n_items)]
    write(tmp_path / "triples.tsv", "\n".join(rows) + "\n")
    return g.load_knowledge_graph(tmp_path / "triples.tsv",
                                  tmp_path / "entities.tsv")


def test_split_seventy_thirty(tmp_path):
    kg = make_purchase_kg(10, tmp_path)
    split = g.split_interactions(kg, 0.7, seed=1)
    user = kg.entity("u1").id
    assert len(split.train[user]) == 7
    assert len(split.test[user]) == 3
    assert not set(split.train[user]) & set(split.test[user])


def test_split_single_purchase_keeps_min_train(tmp_path):
    kg = make_purchase_kg(1, tmp_path)
    split = g.split_interactions(kg, 0.7, seed=1)
    user = kg.entity("u1").id
    assert len(split.train[user]) == 1
    assert split.test[user] == ()


def test_split_deterministic(tmp_path):
    kg = make_purchase_kg(9, tmp_path)
    a = g.split_interactions(kg, 0.7, seed=42)
    b = g.split_interactions(kg, 0.7, seed=42)
    assert a.train == b.train and a.test == b.test
    c = g.split_interactions(kg, 0.7, seed=43)
    assert a.train != c.train or a.test != c.test


def test_split_excludes_users_without_purchases(tmp_path):
    write(tmp_path / "entities.tsv", "u1\tuser\nu2\tuser\ni1\titem\n")
    write(tmp_path / "triples.tsv", "u1\tpurchase\ti1\n")
    kg = g.load_knowledge_graph(tmp_path / "triples.tsv",
                                tmp_path / "entities.tsv")
    split = g.split_interactions(kg, 0.7, seed=0)
    assert kg.entity("u2").id in split.excluded_users
    assert kg.entity("u2").id not in split.train


# -- dataset round trip --------------------------------------------------------


def test_save_load_round_trip_is_fixed_point(tmp_path):
    res = generate_synthetic(SynthConfig(users=6, categories=4,
                                         items_per_category=4,
                                         planted_pairs=4), seed=9)
    d1 = tmp_path / "one"
    d2 = tmp_path / "two"
    g.save_dataset(d1, res.kg, res.assignment, res.split)
    ds1 = g.load_dataset(d1)
    g.save_dataset(d2, ds1.kg, ds1.assignment, ds1.split)
    for fname in g.DATASET_FILES:
        assert (d1 / fname).read_bytes() == (d2 / fname).read_bytes()
    ds2 = g.load_dataset(d2)
    assert sorted(ds1.kg.triples) == sorted(ds2.kg.triples)
    assert ds1.split.train == ds2.split.train
    assert ds1.split.test == ds2.split.test


def test_load_dataset_missing_file_names_command(tmp_path):
    with pytest.raises(DataError, match="synth"):
        g.load_dataset(tmp_path)


def test_adjacency_is_sorted(toy_dir):
    kg = load_toy(toy_dir)
    for e in kg.entities:
        edges = kg.outgoing(e.id)
        assert list(edges) == sorted(edges)
