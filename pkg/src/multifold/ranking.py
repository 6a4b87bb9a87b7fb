"""Link-prediction evaluation: full-candidate ranking per entity slot.

For every test item and every entity slot in it, the slot's entity is
hidden, the item is re-scored with every candidate entity in that slot,
and the true entity's rank (1-based) is recorded.  Reports aggregate the
fraction of ranks <= 10 and the mean rank, overall and per source arity.

Protocols:

* ``triple``: pairwise model on binary items, both slots queried;
* ``instance``: items scored whole; a multi-fold model scores directly,
  a pairwise model scores through its role-pair decomposition;
* ``instance-id``: as ``instance`` on id-carrying items; id slots are
  never queried and id entities are never candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .convert import pair_label, pair_rel_type
from .kb import (
    FACT_ID_ROLE,
    DataError,
    EntityId,
    Instance,
    InstanceRepresentation,
    RelTypeId,
    RoleId,
)
from .models import MTRANSH, TRANSH, CostModel, MultiFoldRelation, NumericError, TransHRelation

PROTOCOLS = ("triple", "instance", "instance-id")
TIE_RULES = ("optimistic", "pessimistic")


@dataclass(frozen=True)
class QueryRecord:
    item: str
    rel_type: RelTypeId
    fold: int | None
    role: RoleId
    rank: int


@dataclass(frozen=True)
class FoldStats:
    hit_at_10: float
    mean_rank: float
    queries: int


@dataclass
class RankingReport:
    protocol: str
    dim: int
    tie_rule: str
    records: list[QueryRecord] = field(default_factory=list)
    candidate_count: int = 0
    sample_fraction: float | None = None
    sample_seed: int | None = None

    @property
    def hit_at_10(self) -> float:
        if not self.records:
            return 0.0
        return sum(1 for r in self.records if r.rank <= 10) / len(self.records)

    @property
    def mean_rank(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.rank for r in self.records) / len(self.records)


def rank_from_costs(costs: np.ndarray, true_index: int, tie_rule: str = "optimistic") -> int:
    """Rank of the true candidate: strictly-better count + 1, or worst tie slot."""
    if tie_rule not in TIE_RULES:
        raise ValueError(f"tie_rule must be one of {TIE_RULES}")
    true_cost = costs[true_index]
    if tie_rule == "optimistic":
        return 1 + int(np.count_nonzero(costs < true_cost))
    return int(np.count_nonzero(costs <= true_cost))


class _CandidateSet:
    """Candidate entities with their embedding rows stacked once."""

    def __init__(self, model: CostModel, names: Sequence[EntityId]):
        self.names = list(names)
        self.index = {name: i for i, name in enumerate(self.names)}
        self.matrix = np.stack([model.embedding.vector(n) for n in self.names])


def _transh_candidate_costs(rel: TransHRelation, x, y, cands: np.ndarray,
                            replace_head: bool) -> np.ndarray:
    n, d = rel.normal, rel.translation
    w = (cands - y) if replace_head else (x - cands)
    s = w - (w @ n)[:, None] * n + d
    return np.einsum("ij,ij->i", s, s)


def _mtransh_candidate_costs(rel: MultiFoldRelation, roles, role_vectors, query_role,
                             cands: np.ndarray) -> np.ndarray:
    n = rel.normal
    w = None
    for role in roles:
        if role == query_role:
            term = rel.role_weights[role] * cands
        else:
            term = rel.role_weights[role] * role_vectors[role]
        w = term if w is None else w + term
    s = w - (w @ n)[:, None] * n + rel.offset
    return np.einsum("ij,ij->i", s, s)


def candidate_costs(model: CostModel, inst: Instance, role: RoleId,
                    candidates: _CandidateSet | Sequence[EntityId],
                    decomposed: bool = False) -> np.ndarray:
    """Item cost with ``role`` filled by each candidate in turn."""
    if not isinstance(candidates, _CandidateSet):
        candidates = _CandidateSet(model, candidates)
    cands = candidates.matrix
    schema = inst.schema
    schema.role_index(role)

    if model.kind == MTRANSH:
        rel = model.relation(schema.rel_type)
        if not isinstance(rel, MultiFoldRelation):
            raise DataError(f"relation {schema.rel_type!r} is not multi-fold")
        if set(schema.roles) != set(rel.role_weights):
            raise DataError(f"roles of {inst.describe()} do not match the model's "
                            f"parameters for {schema.rel_type!r}")
        role_vectors = {r: model.embedding.vector(inst.value(r)) for r in schema.roles
                        if r != role}
        return _mtransh_candidate_costs(rel, sorted(rel.role_weights), role_vectors, role, cands)

    if not decomposed:
        if schema.fold() != 2:
            raise DataError("pairwise model needs binary items (or decomposed scoring)")
        rel = model.relation(schema.rel_type)
        if not isinstance(rel, TransHRelation):
            raise DataError(f"relation {schema.rel_type!r} is not pairwise")
        r1, r2 = schema.roles
        x = model.embedding.vector(inst.value(r1))
        y = model.embedding.vector(inst.value(r2))
        return _transh_candidate_costs(rel, x, y, cands, replace_head=(role == r1))

    total = np.zeros(len(candidates.names))
    for r1, r2 in combinations(schema.roles, 2):
        e1, e2 = inst.value(r1), inst.value(r2)
        if e1 == e2:
            continue
        rt = pair_rel_type(schema.rel_type, pair_label(r1, r2))
        rel = model.relation(rt)
        if role in (r1, r2):
            other = model.embedding.vector(e2 if role == r1 else e1)
            total = total + _transh_candidate_costs(rel, other, other, cands,
                                                    replace_head=(role == r1))
        else:
            total = total + model.transh_cost(rt, model.embedding.vector(e1),
                                              model.embedding.vector(e2))
    return total


def rank_entity(model: CostModel, inst: Instance, role: RoleId,
                candidates: Sequence[EntityId], tie_rule: str = "optimistic",
                decomposed: bool = False) -> int:
    """Rank of the slot's true entity among ``candidates``."""
    cset = candidates if isinstance(candidates, _CandidateSet) else _CandidateSet(model, candidates)
    true_entity = inst.value(role)
    if true_entity not in cset.index:
        raise DataError(f"true entity {true_entity!r} missing from candidates")
    costs = candidate_costs(model, inst, role, cset, decomposed=decomposed)
    if not np.all(np.isfinite(costs)):
        raise NumericError(f"non-finite cost while ranking {inst.describe()}")
    return rank_from_costs(costs, cset.index[true_entity], tie_rule)


def _check_protocol(model: CostModel, protocol: str) -> bool:
    """Returns whether scoring goes through the pairwise decomposition."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    if protocol == "triple":
        if model.kind != TRANSH:
            raise DataError("triple protocol needs a pairwise model")
        return False
    if protocol == "instance-id" and model.kind != MTRANSH:
        raise DataError("instance-id protocol needs a multi-fold model")
    return model.kind == TRANSH


def evaluate(
    model: CostModel,
    test_rep: InstanceRepresentation,
    protocol: str,
    candidates: Sequence[EntityId] | None = None,
    tie_rule: str = "optimistic",
    fold_of_type: Mapping[RelTypeId, int] | None = None,
    sample_fraction: float | None = None,
    sample_seed: int | None = None,
    threads: int = 1,
) -> RankingReport:
    """Rank every queryable slot of every test item.

    ``fold_of_type`` supplies the source arity for converted triples;
    without it, triple-protocol records carry no arity and a per-arity
    breakdown will refuse to run.  ``sample_fraction`` keeps a random
    subset of the queries (seeded) for desk-scale runs.  Queries are
    independent, so ``threads`` > 1 fans them out; results are collected
    in query order and do not depend on the thread count.
    """
    decomposed = _check_protocol(model, protocol)
    if candidates is None:
        candidates = [e for e in model.embedding.entity_list() if e not in model.fact_ids]
    cset = _CandidateSet(model, candidates)

    queries: list[tuple[Instance, RoleId]] = []
    for inst in test_rep.all_instances():
        if protocol == "triple" and inst.fold() != 2:
            raise DataError(f"triple protocol on {inst.fold()}-ary item {inst.describe()}")
        for role in inst.schema.roles:
            if protocol != "triple" and role == FACT_ID_ROLE:
                continue
            if inst.value(role) not in cset.index:
                raise DataError(f"test entity {inst.value(role)!r} unknown to candidates")
            queries.append((inst, role))

    if sample_fraction is not None:
        if not 0 < sample_fraction <= 1:
            raise ValueError("sample_fraction must be in (0, 1]")
        rng = np.random.default_rng(sample_seed)
        keep = round(sample_fraction * len(queries))
        chosen = sorted(rng.permutation(len(queries))[:keep])
        queries = [queries[i] for i in chosen]

    report = RankingReport(
        protocol=protocol, dim=model.embedding.dim, tie_rule=tie_rule,
        candidate_count=len(cset.names),
        sample_fraction=sample_fraction,
        sample_seed=sample_seed if sample_fraction is not None else None,
    )

    def run_query(query: tuple[Instance, RoleId]) -> int:
        inst, role = query
        return rank_entity(model, inst, role, cset, tie_rule, decomposed=decomposed)

    if threads > 1 and len(queries) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            ranks = list(pool.map(run_query, queries))
    else:
        ranks = [run_query(q) for q in queries]

    for (inst, role), rank in zip(queries, ranks):
        rt = inst.schema.rel_type
        if fold_of_type is not None:
            fold = fold_of_type.get(rt)
        elif protocol == "triple":
            fold = None
        else:
            fold = inst.schema.effective_fold()
        report.records.append(QueryRecord(inst.describe(), rt, fold, role, rank))
    return report


def breakdown_by_fold(report: RankingReport) -> dict[int, FoldStats]:
    """Aggregate the report's queries per source arity."""
    if not report.records:
        raise DataError("empty report has no breakdown")
    groups: dict[int, list[int]] = {}
    for rec in report.records:
        if rec.fold is None:
            raise DataError(
                f"query on {rec.rel_type!r} has no source arity; "
                "converted triples need fold provenance"
            )
        groups.setdefault(rec.fold, []).append(rec.rank)
    return {
        fold: FoldStats(
            hit_at_10=sum(1 for r in ranks if r <= 10) / len(ranks),
            mean_rank=sum(ranks) / len(ranks),
            queries=len(ranks),
        )
        for fold, ranks in sorted(groups.items())
    }


def export_report(report: RankingReport, header_lines: Sequence[str] = (),
                  include_records: bool = False) -> str:
    """Tabular text: overall row, per-arity rows, optional raw queries."""
    lines = [f"# {line}" for line in header_lines]
    lines.append(f"# tie_rule {report.tie_rule} candidates {report.candidate_count} "
                 f"queries {len(report.records)}")
    if report.sample_fraction is not None:
        lines.append(f"# sampled fraction {report.sample_fraction!r} seed {report.sample_seed}")
    lines.append("protocol dim hit10 mean_rank")
    lines.append(f"{report.protocol} {report.dim} "
                 f"{100.0 * report.hit_at_10:.2f} {report.mean_rank:.1f}")
    try:
        folds = breakdown_by_fold(report) if report.records else {}
    except DataError:
        folds = {}
    if folds:
        lines.append("fold hit10 mean_rank queries")
        for fold, fs in folds.items():
            lines.append(f"{fold} {100.0 * fs.hit_at_10:.2f} {fs.mean_rank:.1f} {fs.queries}")
    if include_records:
        lines.append("record rel_type fold role rank item")
        for rec in report.records:
            lines.append(f"record {rec.rel_type} {rec.fold if rec.fold is not None else '-'} "
                         f"{rec.role} {rec.rank} {rec.item}")
    return "\n".join(lines) + "\n"
