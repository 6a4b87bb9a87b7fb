"""Fact/instance conversions, recovery, and the star-to-clique operation."""

import numpy as np
import pytest

from multifold import (
    FACT_ID_ROLE,
    DataError,
    Fact,
    Instance,
    InstanceRepresentation,
    LabelledGraph,
    RelationSchema,
    convert_fact_rep,
    drop_fact_ids,
    fact_to_instances,
    fact_to_instances_id,
    pair_label,
    recover_facts,
    s2c_collision_witness,
    s2c_representation,
    s2c_type_folds,
    s2c_vertex,
    triple_edge_set,
)
from conftest import build_credit_facts, random_fact_rep


def credit_fact(fact_id="u1"):
    rep = build_credit_facts()
    for fact in rep.all_facts():
        if fact.fact_id == fact_id:
            return fact
    raise AssertionError(fact_id)


class TestFactExpansion:
    def test_two_instrument_fact_expands_to_two_instances(self):
        u1 = credit_fact("u1")
        out = fact_to_instances_id(u1)
        assert len(out) == 2
        for inst in out:
            assert inst.value(FACT_ID_ROLE) == "u1"
            assert inst.value("artist") == "mia"
        assert {inst.value("instrument") for inst in out} == {"bass", "bass_guitar"}

    def test_degenerate_fact_keeps_no_id(self):
        u2 = credit_fact("u2")
        out = fact_to_instances_id(u2)
        assert len(out) == 1
        (inst,) = out
        assert FACT_ID_ROLE not in inst.schema.roles
        assert out == fact_to_instances(u2)

    def test_cardinality_is_product_of_set_sizes(self):
        schema = RelationSchema.define("q", ("x", "y"))
        fact = Fact.from_assignment(schema, "f", {"x": ["a", "b"], "y": ["c", "d", "e"]})
        # brute-force oracle: enumerate the cartesian product by hand
        expected = {(xx, yy) for xx in ("a", "b") for yy in ("c", "d", "e")}
        out = fact_to_instances(fact)
        assert len(out) == 6 == len(expected)
        assert {(i.value("x"), i.value("y")) for i in out} == expected
        assert len(fact_to_instances_id(fact)) == 6

    def test_plain_expansion_is_id_expansion_restricted(self):
        rng = np.random.default_rng(7)
        rep = random_fact_rep(rng, max_facts=20)
        for fact in rep.all_facts():
            with_id = fact_to_instances_id(fact, force_id=True)
            restricted = set()
            for inst in with_id:
                keep = [r for r in inst.schema.roles if r != FACT_ID_ROLE]
                base = RelationSchema.define(inst.schema.rel_type, keep)
                restricted.add(Instance(base, tuple(inst.value(r) for r in base.roles)))
            assert restricted == set(fact_to_instances(fact))

    def test_set_valued_role_pairs_lost_without_ids(self):
        marriage = RelationSchema.define("marriage", ("spouse", "place"))
        fact = Fact.from_assignment(
            marriage, "m1", {"spouse": ["ana", "kai"], "place": ["dover"]})
        out = fact_to_instances(fact)
        assert {(i.value("spouse"), i.value("place")) for i in out} == {
            ("ana", "dover"), ("kai", "dover")}


class TestRepresentationConversion:
    def test_keep_ids_adds_fact_entities_and_role(self, credit_facts):
        rep = convert_fact_rep(credit_facts, keep_ids=True)
        assert "u1" in rep.entities
        assert rep.schemas["credit"].has_fact_id()
        # u1 expands to two instances, u2 (degenerate, same type) to one
        assert rep.instance_count() == 3
        u2_insts = [i for i in rep.all_instances() if i.value("artist") == "theo"]
        assert [i.value(FACT_ID_ROLE) for i in u2_insts] == ["u2"]

    def test_without_ids_schema_and_entities_unchanged(self, credit_facts):
        rep = convert_fact_rep(credit_facts, keep_ids=False)
        assert rep.entities == credit_facts.entities
        assert rep.schemas["credit"] == credit_facts.schemas["credit"]
        assert rep.instance_count() == 3

    def test_empty_fact_rep(self):
        from multifold import FactRepresentation
        empty = FactRepresentation.build([])
        out = convert_fact_rep(empty, keep_ids=True)
        assert out.instance_count() == 0
        assert out.entities == frozenset()

    def test_fact_id_colliding_with_entity_rejected(self):
        schema = RelationSchema.define("q", ("x", "y"))
        from multifold import FactRepresentation
        rep = FactRepresentation.build([
            Fact.from_assignment(schema, "e9", {"x": ["e9"], "y": ["a", "b"]})])
        with pytest.raises(DataError):
            convert_fact_rep(rep, keep_ids=True)


class TestRecovery:
    def test_credit_roundtrip(self, credit_facts):
        back = recover_facts(convert_fact_rep(credit_facts, keep_ids=True))
        assert back == credit_facts

    def test_degenerate_only_rep_recovers_one_fact_per_instance(self):
        schema = RelationSchema.define("r", ("x", "y"))
        rep = InstanceRepresentation.build([
            Instance(schema, ("a", "b")), Instance(schema, ("a", "c"))])
        back = recover_facts(rep)
        assert back.fact_count() == 2
        assert all(f.is_degenerate() for f in back.all_facts())

    def test_random_roundtrip(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            rep = random_fact_rep(rng)
            assert recover_facts(convert_fact_rep(rep, keep_ids=True)) == rep

    def test_shared_fact_id_across_types_rejected(self):
        s1 = RelationSchema.define("q1", ("x", "y"))
        s2 = RelationSchema.define("q2", ("u", "v"))
        i1 = fact_to_instances_id(
            Fact.from_assignment(s1, "dup", {"x": ["a"], "y": ["b", "c"]}), force_id=True)
        i2 = fact_to_instances_id(
            Fact.from_assignment(s2, "dup", {"u": ["a"], "v": ["b", "d"]}), force_id=True)
        rep = InstanceRepresentation.build(list(i1) + list(i2))
        with pytest.raises(DataError, match="dup"):
            recover_facts(rep)

    def test_partial_group_recovers_subfact(self):
        schema = RelationSchema.define("q", ("x", "y"))
        fact = Fact.from_assignment(schema, "f", {"x": ["a"], "y": ["b", "c", "d"]})
        insts = sorted(fact_to_instances_id(fact), key=Instance.sort_key)
        partial = InstanceRepresentation.build(insts[:2])
        (recovered,) = recover_facts(partial).all_facts()
        assert recovered.role_set("x") == {"a"}
        assert recovered.role_set("y") < fact.role_set("y")
        assert len(recovered.role_set("y")) == 2


class TestDropFactIds:
    def test_drop_undoes_keep(self, credit_facts):
        with_ids = convert_fact_rep(credit_facts, keep_ids=True)
        without = convert_fact_rep(credit_facts, keep_ids=False)
        assert drop_fact_ids(with_ids) == without


class TestS2CVertex:
    @staticmethod
    def star_graph():
        # hub A joined to 1..4 with distinct labels, hub B to 4 and 5
        return LabelledGraph.from_edges([
            ("1", "a", "A"), ("2", "b", "A"), ("3", "c", "A"), ("4", "d", "A"),
            ("4", "e", "B"), ("5", "f", "B"),
        ])

    def test_full_star_becomes_clique(self):
        g = s2c_vertex(self.star_graph(), "A")
        assert "A" not in g.vertices
        added = {e for e in g.edges if e[1] != "e" and e[1] != "f"}
        assert added == {
            ("1", "a.b", "2"), ("1", "a.c", "3"), ("1", "a.d", "4"),
            ("2", "b.c", "3"), ("2", "b.d", "4"), ("3", "c.d", "4"),
        }
        # edges to B untouched
        assert ("4", "e", "B") in g.edges and ("5", "f", "B") in g.edges

    def test_both_hubs(self):
        g = s2c_vertex(s2c_vertex(self.star_graph(), "A"), "B")
        assert g.vertices == {"1", "2", "3", "4", "5"}
        assert ("4", "e.f", "5") in g.edges
        assert len(g.edges) == 7

    def test_degree_one_vertex_just_disappears(self):
        g = LabelledGraph.from_edges([("x", "a", "h")])
        out = s2c_vertex(g, "h")
        assert out.vertices == {"x"}
        assert out.edges == frozenset()

    def test_equal_labels_add_nothing(self):
        g = LabelledGraph.from_edges([("x", "spouse", "h"), ("y", "spouse", "h"),
                                      ("z", "place", "h")])
        out = s2c_vertex(g, "h")
        labels = {e[1] for e in out.edges}
        assert labels == {"place.spouse"}
        assert len(out.edges) == 2  # x-z and y-z, never x-y

    def test_missing_vertex_rejected(self):
        with pytest.raises(ValueError):
            s2c_vertex(self.star_graph(), "nope")


class TestS2CRepresentation:
    def test_threefold_instance_yields_three_triples(self):
        schema = RelationSchema.define("r", ("x", "y", "z"))
        rep = InstanceRepresentation.build([Instance(schema, ("e1", "e2", "e3"))])
        out = s2c_representation(rep)
        assert out.instance_count() == 3
        assert set(out.schemas) == {"r.x.y", "r.x.z", "r.y.z"}
        assert out.entities == rep.entities

    def test_binary_instance_yields_one_triple(self):
        schema = RelationSchema.define("r", ("x", "y"))
        rep = InstanceRepresentation.build([Instance(schema, ("e1", "e2"))])
        out = s2c_representation(rep)
        assert out.instance_count() == 1
        (triple,) = out.all_instances()
        assert triple.schema.rel_type == "r." + pair_label("x", "y")

    def test_repeated_entity_drops_self_loop(self):
        schema = RelationSchema.define("r", ("x", "y", "z"))
        rep = InstanceRepresentation.build([Instance(schema, ("e1", "e1", "e3"))])
        out = s2c_representation(rep)
        assert out.instance_count() == 2  # x.y pair collapsed

    def test_triple_count_binomial(self):
        rng = np.random.default_rng(3)
        for fold in range(2, 7):
            schema = RelationSchema.define(f"r{fold}", tuple(f"p{k}" for k in range(fold)))
            ents = tuple(f"e{int(v)}" for v in rng.choice(1000, size=fold, replace=False))
            rep = InstanceRepresentation.build([Instance(schema, ents)])
            assert s2c_representation(rep).instance_count() == fold * (fold - 1) // 2

    def test_type_folds(self):
        schema = RelationSchema.define("r", ("x", "y", "z"))
        rep = InstanceRepresentation.build([Instance(schema, ("e1", "e2", "e3"))])
        assert s2c_type_folds(rep) == {"r.x.y": 3, "r.x.z": 3, "r.y.z": 3}


class TestCollisionWitness:
    def test_witness_collides(self):
        one, clique = s2c_collision_witness()
        assert one != clique
        assert triple_edge_set(s2c_representation(one)) == \
            triple_edge_set(s2c_representation(clique))

    def test_double_conversion_keeps_edges_but_compounds_types(self):
        one, clique = s2c_collision_witness()
        for rep in (one, clique):
            once = s2c_representation(rep)
            twice = s2c_representation(once)
            assert triple_edge_set(twice) == triple_edge_set(once)
            assert set(twice.schemas) != set(once.schemas)

    def test_same_relation_collision_exists(self):
        """Two instance sets of one relation with equal pairwise images."""
        schema = RelationSchema.define("r", ("pa", "pb", "pc"))
        g1 = InstanceRepresentation.build([
            Instance(schema, ("1", "3", "5")), Instance(schema, ("1", "4", "6")),
            Instance(schema, ("2", "3", "6")), Instance(schema, ("2", "4", "5")),
        ])
        g2 = InstanceRepresentation.build([
            Instance(schema, ("1", "3", "6")), Instance(schema, ("1", "4", "5")),
            Instance(schema, ("2", "3", "5")), Instance(schema, ("2", "4", "6")),
        ])
        assert g1 != g2
        assert s2c_representation(g1) == s2c_representation(g2)
