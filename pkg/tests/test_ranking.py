"""Entity ranking, the evaluation protocols, and report aggregation."""

import numpy as np
import pytest

from multifold import (
    CostModel,
    DataError,
    EmbeddingTable,
    Instance,
    InstanceRepresentation,
    MultiFoldRelation,
    RelationSchema,
    TransHRelation,
    breakdown_by_fold,
    evaluate,
    export_report,
    rank_entity,
    rank_from_costs,
    s2c_representation,
    s2c_type_folds,
)
from multifold.convert import s2c_instance_triples
from multifold.models import mtransh_cost, transh_pair_cost


def unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def toy_multifold_model(rng, n_entities=5, dim=4, fold=3):
    names = [f"e{i}" for i in range(n_entities)]
    table = EmbeddingTable(dim, {n: rng.standard_normal(dim) for n in names})
    roles = tuple(f"p{k}" for k in range(fold))
    schema = RelationSchema.define("rel", roles)
    rel = MultiFoldRelation(unit(rng, dim), rng.standard_normal(dim),
                            {r: float(rng.standard_normal()) for r in roles})
    model = CostModel("mtransh", table, {"rel": rel})
    return model, schema, names


class TestRankFromCosts:
    def test_unique_minimum_ranks_first(self):
        costs = np.array([3.0, 1.0, 2.0])
        assert rank_from_costs(costs, 1) == 1
        assert rank_from_costs(costs, 0) == 3

    def test_constant_costs_optimistic_rank_one(self):
        costs = np.full(7, 2.5)
        assert rank_from_costs(costs, 4, "optimistic") == 1
        assert rank_from_costs(costs, 4, "pessimistic") == 7

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            # costs on a fixed binary grid so adding an integer stays exact
            costs = rng.integers(0, 2 ** 20, size=12).astype(float) / 2 ** 20
            i = int(rng.integers(12))
            shifted = costs + 7.0
            for rule in ("optimistic", "pessimistic"):
                assert rank_from_costs(costs, i, rule) == rank_from_costs(shifted, i, rule)


class TestRankEntity:
    def test_true_entity_at_unique_minimum(self):
        rng = np.random.default_rng(1)
        model, schema, names = toy_multifold_model(rng)
        inst = Instance(schema, ("e0", "e1", "e2"))
        # place entity e1 exactly where the residual vanishes is hard; instead
        # verify against the exhaustive oracle below
        role = "p1"
        ranks = {}
        for rule in ("optimistic", "pessimistic"):
            ranks[rule] = rank_entity(model, inst, role, names, tie_rule=rule)
        oracle_costs = []
        rel = model.relations["rel"]
        for cand in names:
            probe = inst.replace(role, cand)
            vecs = {r: model.embedding.vector(probe.value(r)) for r in schema.roles}
            oracle_costs.append(mtransh_cost(rel, vecs))
        true_cost = oracle_costs[names.index(inst.value(role))]
        assert ranks["optimistic"] == 1 + sum(1 for c in oracle_costs if c < true_cost)
        assert ranks["pessimistic"] == sum(1 for c in oracle_costs if c <= true_cost)

    def test_pairwise_both_slots_against_oracle(self):
        rng = np.random.default_rng(2)
        names = [f"e{i}" for i in range(6)]
        table = EmbeddingTable(3, {n: rng.standard_normal(3) for n in names})
        schema = RelationSchema.define("bin", ("h", "t"))
        rel = TransHRelation(unit(rng, 3), rng.standard_normal(3))
        model = CostModel("transh", table, {"bin": rel})
        inst = Instance(schema, ("e0", "e3"))
        for role in ("h", "t"):
            got = rank_entity(model, inst, role, names)
            costs = []
            for cand in names:
                probe = inst.replace(role, cand)
                costs.append(transh_pair_cost(rel, table.vector(probe.value("h")),
                                              table.vector(probe.value("t"))))
            true_cost = costs[names.index(inst.value(role))]
            assert got == 1 + sum(1 for c in costs if c < true_cost)

    def test_decomposed_against_oracle(self):
        rng = np.random.default_rng(3)
        names = [f"e{i}" for i in range(6)]
        table = EmbeddingTable(3, {n: rng.standard_normal(3) for n in names})
        schema = RelationSchema.define("rel", ("p0", "p1", "p2"))
        inst = Instance(schema, ("e0", "e1", "e2"))
        relations = {t.schema.rel_type: TransHRelation(unit(rng, 3), rng.standard_normal(3))
                     for t in s2c_instance_triples(inst)}
        model = CostModel("transh", table, relations)
        for role in schema.roles:
            got = rank_entity(model, inst, role, names, decomposed=True)
            costs = [model.decomposed_instance_cost(inst.replace(role, cand))
                     for cand in names]
            true_cost = costs[names.index(inst.value(role))]
            assert got == 1 + sum(1 for c in costs if c < true_cost)

    def test_monotone_refinement(self):
        """Removing a non-true candidate never worsens the rank."""
        rng = np.random.default_rng(4)
        model, schema, names = toy_multifold_model(rng, n_entities=8)
        inst = Instance(schema, ("e0", "e1", "e2"))
        for trial in range(50):
            role = schema.roles[trial % 3]
            full = rank_entity(model, inst, role, names)
            drop = names[int(rng.integers(len(names)))]
            if drop == inst.value(role):
                continue
            reduced = [n for n in names if n != drop]
            assert rank_entity(model, inst, role, reduced) <= full

    def test_true_entity_missing_rejected(self):
        rng = np.random.default_rng(5)
        model, schema, names = toy_multifold_model(rng)
        inst = Instance(schema, ("e0", "e1", "e2"))
        with pytest.raises(DataError):
            rank_entity(model, inst, "p0", ["e3", "e4"])


class TestEvaluate:
    def test_perfect_model_scores_perfectly(self):
        # one instance; craft embeddings so the true assignment is the unique minimum
        dim = 3
        names = ["e0", "e1", "e2", "far0", "far1"]
        vecs = {
            "e0": np.array([1.0, 0.0, 0.0]),
            "e1": np.array([0.0, 1.0, 0.0]),
            "e2": np.array([-1.0, -1.0, 0.0]),
            "far0": np.array([50.0, 0.0, 0.0]),
            "far1": np.array([0.0, 50.0, 0.0]),
        }
        table = EmbeddingTable(dim, vecs)
        schema = RelationSchema.define("rel", ("p0", "p1", "p2"))
        rel = MultiFoldRelation(np.array([0.0, 0.0, 1.0]), np.zeros(3),
                                {"p0": 1.0, "p1": 1.0, "p2": 1.0})
        model = CostModel("mtransh", table, {"rel": rel})
        rep = InstanceRepresentation.build([Instance(schema, ("e0", "e1", "e2"))])
        report = evaluate(model, rep, "instance")
        assert report.hit_at_10 == 1.0
        assert report.mean_rank == 1.0
        assert len(report.records) == 3

    def test_aggregates_match_oracle_recomputation(self):
        rng = np.random.default_rng(6)
        model, schema, names = toy_multifold_model(rng, n_entities=9)
        instances = []
        while len(instances) < 10:
            picks = rng.choice(len(names), size=3, replace=False)
            inst = Instance(schema, tuple(names[int(p)] for p in picks))
            if inst not in instances:
                instances.append(inst)
        rep = InstanceRepresentation.build(instances, extra_entities=names)
        report = evaluate(model, rep, "instance", candidates=names)
        oracle_ranks = []
        rel = model.relations["rel"]
        for inst in rep.all_instances():
            for role in schema.roles:
                costs = []
                for cand in names:
                    probe = inst.replace(role, cand)
                    vecs = {r: model.embedding.vector(probe.value(r)) for r in schema.roles}
                    costs.append(mtransh_cost(rel, vecs))
                true_cost = costs[names.index(inst.value(role))]
                oracle_ranks.append(1 + sum(1 for c in costs if c < true_cost))
        assert sorted(r.rank for r in report.records) == sorted(oracle_ranks)
        assert report.hit_at_10 == sum(1 for r in oracle_ranks if r <= 10) / len(oracle_ranks)
        assert report.mean_rank == pytest.approx(float(np.mean(oracle_ranks)))

    def test_protocol_model_mismatch(self):
        rng = np.random.default_rng(7)
        model, schema, names = toy_multifold_model(rng)
        rep = InstanceRepresentation.build([Instance(schema, ("e0", "e1", "e2"))])
        with pytest.raises(DataError):
            evaluate(model, rep, "triple")

    def test_threaded_matches_sequential(self):
        rng = np.random.default_rng(8)
        model, schema, names = toy_multifold_model(rng, n_entities=10)
        instances = [Instance(schema, tuple(names[int(p)] for p in
                                            rng.choice(len(names), 3, replace=False)))
                     for _ in range(8)]
        rep = InstanceRepresentation.build(instances, extra_entities=names)
        seq = evaluate(model, rep, "instance", candidates=names)
        par = evaluate(model, rep, "instance", candidates=names, threads=4)
        assert [r.rank for r in seq.records] == [r.rank for r in par.records]

    def test_sampling_restricts_queries(self):
        rng = np.random.default_rng(9)
        model, schema, names = toy_multifold_model(rng, n_entities=10)
        instances = [Instance(schema, tuple(names[int(p)] for p in
                                            rng.choice(len(names), 3, replace=False)))
                     for _ in range(10)]
        rep = InstanceRepresentation.build(instances, extra_entities=names)
        full = evaluate(model, rep, "instance", candidates=names)
        half = evaluate(model, rep, "instance", candidates=names,
                        sample_fraction=0.5, sample_seed=3)
        assert len(half.records) == round(0.5 * len(full.records))
        assert half.sample_fraction == 0.5 and half.sample_seed == 3

    def test_id_slots_skipped_and_ids_not_candidates(self):
        rng = np.random.default_rng(10)
        dim = 3
        names = ["e0", "e1", "fid0"]
        table = EmbeddingTable(dim, {n: rng.standard_normal(dim) for n in names})
        schema = RelationSchema.define("rel", ("FACT-ID", "a", "b"))
        rel = MultiFoldRelation(unit(rng, dim), rng.standard_normal(dim),
                                {"FACT-ID": 0.5, "a": 1.0, "b": -1.0})
        model = CostModel("mtransh", table, {"rel": rel}, fact_ids=frozenset(["fid0"]))
        rep = InstanceRepresentation.build([Instance(schema, ("fid0", "e0", "e1"))])
        report = evaluate(model, rep, "instance-id")
        assert {r.role for r in report.records} == {"a", "b"}
        assert report.candidate_count == 2
        assert all(r.fold == 2 for r in report.records)


class TestBreakdown:
    @staticmethod
    def mixed_report():
        rng = np.random.default_rng(11)
        names = [f"e{i}" for i in range(8)]
        table = EmbeddingTable(3, {n: rng.standard_normal(3) for n in names})
        relations = {}
        instances = []
        for fold, rel_name in ((2, "bin"), (3, "tri")):
            roles = tuple(f"{rel_name}_{k}" for k in range(fold))
            schema = RelationSchema.define(rel_name, roles)
            relations[rel_name] = MultiFoldRelation(
                unit(rng, 3), rng.standard_normal(3),
                {r: float(rng.standard_normal()) for r in roles})
            for _ in range(4):
                picks = rng.choice(len(names), size=fold, replace=False)
                instances.append(Instance(schema, tuple(names[int(p)] for p in picks)))
        model = CostModel("mtransh", table, relations)
        rep = InstanceRepresentation.build(instances, extra_entities=names)
        return evaluate(model, rep, "instance", candidates=names)

    def test_partition_matches_manual_split(self):
        report = self.mixed_report()
        folds = breakdown_by_fold(report)
        assert set(folds) == {2, 3}
        for fold, fs in folds.items():
            ranks = [r.rank for r in report.records if r.fold == fold]
            assert fs.queries == len(ranks)
            assert fs.mean_rank == pytest.approx(float(np.mean(ranks)))
            assert fs.hit_at_10 == pytest.approx(sum(1 for r in ranks if r <= 10) / len(ranks))

    def test_weighted_recombination_equals_overall(self):
        report = self.mixed_report()
        folds = breakdown_by_fold(report)
        total = sum(fs.queries for fs in folds.values())
        hit = sum(fs.hit_at_10 * fs.queries for fs in folds.values()) / total
        rank = sum(fs.mean_rank * fs.queries for fs in folds.values()) / total
        assert abs(hit - report.hit_at_10) <= 1e-9
        assert abs(rank - report.mean_rank) <= 1e-9

    def test_single_fold_breakdown_equals_overall(self):
        rng = np.random.default_rng(12)
        names = [f"e{i}" for i in range(6)]
        table = EmbeddingTable(3, {n: rng.standard_normal(3) for n in names})
        schema = RelationSchema.define("bin", ("h", "t"))
        rel = MultiFoldRelation(unit(rng, 3), rng.standard_normal(3),
                                {"h": 1.0, "t": -1.0})
        model = CostModel("mtransh", table, {"bin": rel})
        rep = InstanceRepresentation.build(
            [Instance(schema, ("e0", "e1")), Instance(schema, ("e2", "e3"))],
            extra_entities=names)
        report = evaluate(model, rep, "instance", candidates=names)
        folds = breakdown_by_fold(report)
        assert set(folds) == {2}
        assert folds[2].hit_at_10 == report.hit_at_10
        assert folds[2].mean_rank == report.mean_rank

    def test_triple_protocol_without_provenance_refuses_breakdown(self):
        rng = np.random.default_rng(13)
        names = [f"e{i}" for i in range(5)]
        table = EmbeddingTable(2, {n: rng.standard_normal(2) for n in names})
        schema = RelationSchema.define("bin", ("h", "t"))
        model = CostModel("transh", table,
                          {"bin": TransHRelation(unit(rng, 2), rng.standard_normal(2))})
        rep = InstanceRepresentation.build([Instance(schema, ("e0", "e1"))],
                                           extra_entities=names)
        report = evaluate(model, rep, "triple", candidates=names)
        assert all(r.fold is None for r in report.records)
        with pytest.raises(DataError):
            breakdown_by_fold(report)

    def test_triple_protocol_with_fold_map(self):
        rng = np.random.default_rng(14)
        names = [f"e{i}" for i in range(5)]
        table = EmbeddingTable(2, {n: rng.standard_normal(2) for n in names})
        source = RelationSchema.define("rel", ("p0", "p1", "p2"))
        source_rep = InstanceRepresentation.build([Instance(source, ("e0", "e1", "e2"))],
                                                  extra_entities=names)
        triples = s2c_representation(source_rep)
        relations = {rt: TransHRelation(unit(rng, 2), rng.standard_normal(2))
                     for rt in triples.schemas}
        model = CostModel("transh", table, relations)
        report = evaluate(model, triples, "triple", candidates=names,
                          fold_of_type=s2c_type_folds(source_rep))
        assert {r.fold for r in report.records} == {3}
        assert set(breakdown_by_fold(report)) == {3}


class TestExport:
    def test_export_contains_header_and_fold_rows(self):
        report = TestBreakdown.mixed_report()
        text = export_report(report, header_lines=["seed: 0"])
        lines = text.splitlines()
        assert "protocol dim hit10 mean_rank" in lines
        idx = lines.index("protocol dim hit10 mean_rank")
        row = lines[idx + 1].split()
        assert row[0] == "instance" and int(row[1]) == 3
        assert float(row[2]) == pytest.approx(100 * report.hit_at_10, abs=0.005)
        assert any(line.startswith("fold ") for line in lines)

    def test_records_roundtrip_aggregates(self):
        report = TestBreakdown.mixed_report()
        text = export_report(report, include_records=True)
        ranks = [int(line.split()[4]) for line in text.splitlines()
                 if line.startswith("record ") and not line.startswith("record rel_type")]
        assert len(ranks) == len(report.records)
        assert sum(1 for r in ranks if r <= 10) / len(ranks) == pytest.approx(report.hit_at_10)
