"""File formats, the dataset construction pipeline, and model persistence.

Text formats (UTF-8, LF line endings, ``#`` starts a comment line):

* positional instances: ``rel e1 ... eJ`` whitespace-separated; role names
  are synthesized per relation (``0``..``J-1``, zero-padded) unless a
  schema sidecar supplies them;
* keyed instances: ``rel<TAB>role=entity<TAB>...``;
* schemas sidecar: ``rel<TAB>role<TAB>role...``;
* facts: ``meta_rel<TAB>fact_id<TAB>role={e1,e2,...}<TAB>...``;
* arity sidecar: ``rel_type<TAB>source_arity``.

Floats serialize via ``repr`` (shortest round-trip), so a saved model
reloads bit-exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import convert
from .kb import (
    FACT_ID_ROLE,
    DataError,
    EntityId,
    Fact,
    FactRepresentation,
    Instance,
    InstanceRepresentation,
    RelationSchema,
    RelTypeId,
    intern_entity,
)
from .models import (
    MTRANSH,
    TRANSH,
    CostModel,
    EmbeddingTable,
    MultiFoldRelation,
    NumericError,
    TransHRelation,
)

logger = logging.getLogger(__name__)

DATA_FORMAT_VERSION = 1
MODEL_FORMAT_VERSION = 1


def _data_lines(path: str | Path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def _positional_roles(arity: int) -> tuple[str, ...]:
    width = len(str(arity - 1))
    return tuple(str(i).zfill(width) for i in range(arity))


def parse_schemas(path: str | Path) -> dict[RelTypeId, RelationSchema]:
    """Sidecar reader: one relation per line, name then its role names."""
    schemas: dict[RelTypeId, RelationSchema] = {}
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) < 2:
            raise DataError("schema line needs a relation and at least one role",
                            str(path), lineno)
        try:
            schema = RelationSchema.define(parts[0], parts[1:])
        except DataError as exc:
            raise DataError(str(exc), str(path), lineno) from None
        if parts[0] in schemas:
            raise DataError(f"duplicate schema for {parts[0]!r}", str(path), lineno)
        schemas[parts[0]] = schema
    return schemas


def write_schemas(schemas: Mapping[RelTypeId, RelationSchema], path: str | Path,
                  header: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for rt in sorted(schemas):
            fh.write("\t".join((rt,) + schemas[rt].roles) + "\n")


def parse_instances(
    path: str | Path,
    fmt: str = "positional",
    schemas: Mapping[RelTypeId, RelationSchema] | None = None,
) -> InstanceRepresentation:
    """Read an instance file; duplicate lines merge with a logged count."""
    if fmt not in ("positional", "keyed"):
        raise ValueError(f"unknown instance format {fmt!r}")
    known: dict[RelTypeId, RelationSchema] = dict(schemas or {})
    seen: set[Instance] = set()
    instances: list[Instance] = []
    duplicates = 0
    for lineno, line in _data_lines(path):
        if fmt == "positional":
            parts = line.split()
            if len(parts) < 2:
                raise DataError("expected a relation name and at least one entity",
                                str(path), lineno)
            rel, entities = parts[0], parts[1:]
            schema = known.get(rel)
            if schema is None:
                try:
                    schema = RelationSchema.define(rel, _positional_roles(len(entities)))
                except DataError as exc:
                    raise DataError(str(exc), str(path), lineno) from None
                known[rel] = schema
            if len(entities) != schema.fold():
                raise DataError(
                    f"relation {rel!r} has arity {schema.fold()}, line has {len(entities)}",
                    str(path), lineno)
            try:
                inst = Instance(schema, tuple(intern_entity(e) for e in entities))
            except DataError as exc:
                raise DataError(str(exc), str(path), lineno) from None
        else:
            parts = line.split("\t")
            if len(parts) < 2:
                raise DataError("expected a relation name and role=entity fields",
                                str(path), lineno)
            rel = parts[0]
            assignment: dict[str, str] = {}
            for fieldstr in parts[1:]:
                role, eq, entity = fieldstr.partition("=")
                if not eq or not role or not entity:
                    raise DataError(f"malformed field {fieldstr!r}", str(path), lineno)
                if role in assignment:
                    raise DataError(f"role {role!r} given twice", str(path), lineno)
                assignment[role] = entity
            schema = known.get(rel)
            if schema is None:
                try:
                    schema = RelationSchema.define(rel, assignment.keys())
                except DataError as exc:
                    raise DataError(str(exc), str(path), lineno) from None
                known[rel] = schema
            try:
                inst = Instance.from_assignment(schema, assignment)
            except DataError as exc:
                raise DataError(str(exc), str(path), lineno) from None
        if inst in seen:
            duplicates += 1
        else:
            seen.add(inst)
            instances.append(inst)
    if duplicates:
        logger.warning("%s: %d duplicate instance line(s) merged", path, duplicates)
    return InstanceRepresentation.build(instances)


def write_instances(rep: InstanceRepresentation, path: str | Path, fmt: str = "positional",
                    header: Sequence[str] = ()) -> None:
    if fmt not in ("positional", "keyed"):
        raise ValueError(f"unknown instance format {fmt!r}")
    with open(path, "w", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for inst in rep.all_instances():
            if fmt == "positional":
                fh.write(" ".join((inst.schema.rel_type,) + inst.entities) + "\n")
            else:
                fields = "\t".join(f"{r}={e}" for r, e in zip(inst.schema.roles, inst.entities))
                fh.write(f"{inst.schema.rel_type}\t{fields}\n")


def parse_facts(path: str | Path) -> FactRepresentation:
    """Read a fact file; role values are brace-wrapped entity sets."""
    known: dict[RelTypeId, RelationSchema] = {}
    seen_ids: set[EntityId] = set()
    facts: list[Fact] = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) < 3:
            raise DataError("expected meta-relation, fact id and role={...} fields",
                            str(path), lineno)
        rel, fact_id = parts[0], parts[1]
        if fact_id in seen_ids:
            raise DataError(f"duplicate fact id {fact_id!r}", str(path), lineno)
        assignment: dict[str, list[str]] = {}
        for fieldstr in parts[2:]:
            role, eq, value = fieldstr.partition("=")
            if not eq or not role:
                raise DataError(f"malformed field {fieldstr!r}", str(path), lineno)
            if not (value.startswith("{") and value.endswith("}")):
                raise DataError(f"role {role!r} value must be brace-wrapped", str(path), lineno)
            inner = value[1:-1]
            entities = [e for e in inner.split(",") if e] if inner else []
            if not entities:
                raise DataError(f"role {role!r} has an empty entity set", str(path), lineno)
            if role in assignment:
                raise DataError(f"role {role!r} given twice", str(path), lineno)
            assignment[role] = entities
        schema = known.get(rel)
        if schema is None:
            try:
                schema = RelationSchema.define(rel, assignment.keys())
            except DataError as exc:
                raise DataError(str(exc), str(path), lineno) from None
            known[rel] = schema
        try:
            fact = Fact.from_assignment(schema, fact_id, assignment)
        except DataError as exc:
            raise DataError(str(exc), str(path), lineno) from None
        seen_ids.add(fact_id)
        facts.append(fact)
    before = len(facts)
    rep = FactRepresentation.build(facts)
    if rep.fact_count() < before:
        logger.warning("%s: %d fact(s) with identical content merged", path,
                       before - rep.fact_count())
    return rep


def write_facts(rep: FactRepresentation, path: str | Path, header: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for fact in rep.all_facts():
            fields = "\t".join(
                f"{role}={{{','.join(sorted(ents))}}}"
                for role, ents in zip(fact.schema.roles, fact.entity_sets)
            )
            fh.write(f"{fact.schema.rel_type}\t{fact.fact_id}\t{fields}\n")


def parse_fold_map(path: str | Path) -> dict[RelTypeId, int]:
    folds: dict[RelTypeId, int] = {}
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError("expected relation type and arity", str(path), lineno)
        try:
            folds[parts[0]] = int(parts[1])
        except ValueError:
            raise DataError(f"bad arity {parts[1]!r}", str(path), lineno) from None
    return folds


def write_fold_map(folds: Mapping[RelTypeId, int], path: str | Path,
                   header: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for rt in sorted(folds):
            fh.write(f"{rt}\t{folds[rt]}\n")


def verify_counts(rep: InstanceRepresentation | FactRepresentation,
                  entities: int | None = None, rel_types: int | None = None,
                  instances: int | None = None) -> None:
    """Strict-mode integrity check against externally known counts."""
    from .kb import stats as kb_stats

    got = kb_stats(rep)
    for name, want, have in (
        ("entities", entities, got.entity_count),
        ("relation types", rel_types, got.rel_type_count),
        ("instances", instances, got.instance_count),
    ):
        if want is not None and want != have:
            raise DataError(f"count mismatch: expected {want} {name}, found {have}")


def filter_pipeline(
    rep: FactRepresentation,
    min_entity_instances: int = 5,
    max_facts_per_type: int = 10000,
    drop_single_role: bool = True,
    seed: int = 0,
) -> tuple[InstanceRepresentation, InstanceRepresentation]:
    """Construct the consistent instance datasets from raw facts.

    In order: drop 1-role meta-relations, cap each meta-relation at
    ``max_facts_per_type`` facts by seeded sampling, expand to instances,
    then repeatedly drop entities appearing in fewer than
    ``min_entity_instances`` instances (with their instances) until the
    bound holds everywhere.  Returns the plain dataset and the id-carrying
    dataset restricted to the same surviving instances.
    """
    rng = np.random.default_rng(seed)
    kept_facts: list[Fact] = []
    for qt in sorted(rep.facts):
        schema = rep.schemas[qt]
        if drop_single_role and schema.fold() < 2:
            continue
        facts = sorted(rep.facts[qt], key=Fact.sort_key)
        if len(facts) > max_facts_per_type:
            chosen = rng.permutation(len(facts))[:max_facts_per_type]
            facts = [facts[int(i)] for i in sorted(chosen)]
        kept_facts.extend(facts)
    capped = FactRepresentation.build(kept_facts)

    plain = convert.convert_fact_rep(capped, keep_ids=False)
    surviving = set(plain.all_instances())
    while True:
        degree: dict[EntityId, int] = {}
        for inst in surviving:
            for e in inst.entities:
                degree[e] = degree.get(e, 0) + 1
        low = {e for e, d in degree.items() if d < min_entity_instances}
        if not low:
            break
        surviving = {i for i in surviving if not any(e in low for e in i.entities)}

    g = InstanceRepresentation.build(sorted(surviving, key=Instance.sort_key))

    with_ids = convert.convert_fact_rep(capped, keep_ids=True)
    kept_id_instances = []
    for inst in with_ids.all_instances():
        if inst.schema.has_fact_id():
            base = [e for r, e in zip(inst.schema.roles, inst.entities) if r != FACT_ID_ROLE]
            base_schema = g.schemas.get(inst.schema.rel_type)
            restricted = Instance(base_schema, tuple(base)) if base_schema else None
        else:
            restricted = inst if inst.schema.rel_type in g.schemas else None
        if restricted is not None and restricted in g.instances.get(inst.schema.rel_type, frozenset()):
            kept_id_instances.append(inst)
    g_id = InstanceRepresentation.build(kept_id_instances)
    return g, g_id


@dataclass
class DatasetBundle:
    """A train/test pair of one dataset variant with per-item provenance.

    ``provenance`` maps each instance to (source fact id or None, source
    arity); ``fold_by_type`` is the per-relation-type arity map used for
    breakdown on converted triples.
    """

    variant: str
    train: InstanceRepresentation
    test: InstanceRepresentation
    provenance: dict[Instance, tuple[EntityId | None, int]]
    fold_by_type: dict[RelTypeId, int] | None = None


@dataclass
class SplitResult:
    g: DatasetBundle
    g_id: DatasetBundle
    g_s2c: DatasetBundle
    seed: int
    requested_test_fraction: float
    realized_test_fraction: float


def _restriction(inst: Instance, base_schema: RelationSchema) -> Instance:
    if not inst.schema.has_fact_id():
        return inst
    ents = tuple(e for r, e in zip(inst.schema.roles, inst.entities) if r != FACT_ID_ROLE)
    return Instance(base_schema, ents)


def split(g_id: InstanceRepresentation, test_fraction: float, seed: int = 0) -> SplitResult:
    """Random split with guaranteed fact-id coverage on the training side.

    The split is drawn over the id-free instances (so all three variants
    partition consistently); any fact whose instances all landed in test is
    moved whole to train, which keeps every test fact-id entity present in
    training.  The realized test fraction is reported, not rebalanced.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")

    base_schemas: dict[RelTypeId, RelationSchema] = {}
    for rt, schema in g_id.schemas.items():
        if schema.has_fact_id():
            base_schemas[rt] = RelationSchema.define(
                rt, tuple(r for r in schema.roles if r != FACT_ID_ROLE))
        else:
            base_schemas[rt] = schema

    groups: dict[Instance, list[Instance]] = {}
    for inst in g_id.all_instances():
        key = _restriction(inst, base_schemas[inst.schema.rel_type])
        groups.setdefault(key, []).append(inst)
    keys = sorted(groups, key=Instance.sort_key)
    if len(keys) < 2:
        raise DataError("need at least two instances to split")

    rng = np.random.default_rng(seed)
    n_test = round(test_fraction * len(keys))
    if n_test >= len(keys):
        raise DataError("test fraction leaves an empty training set")
    order = rng.permutation(len(keys))
    test_keys = {keys[int(i)] for i in order[:n_test]}

    fact_groups: dict[EntityId, set[Instance]] = {}
    for key, members in groups.items():
        for inst in members:
            if inst.schema.has_fact_id():
                fact_groups.setdefault(inst.value(FACT_ID_ROLE), set()).add(key)
    for fid in sorted(fact_groups):
        if fact_groups[fid] <= test_keys:
            test_keys -= fact_groups[fid]

    train_keys = [k for k in keys if k not in test_keys]
    test_keys_sorted = [k for k in keys if k in test_keys]

    def build_side(side_keys: list[Instance]) -> tuple[InstanceRepresentation, InstanceRepresentation]:
        plain = InstanceRepresentation.build(side_keys)
        with_ids = InstanceRepresentation.build(
            [m for k in side_keys for m in groups[k]])
        return plain, with_ids

    g_train, gid_train = build_side(train_keys)
    g_test, gid_test = build_side(test_keys_sorted)
    s2c_train = convert.s2c_representation(g_train)
    s2c_test = convert.s2c_representation(g_test)

    def plain_provenance(rep: InstanceRepresentation) -> dict:
        prov = {}
        for inst in rep.all_instances():
            members = groups[inst]
            fids = sorted(m.value(FACT_ID_ROLE) for m in members if m.schema.has_fact_id())
            prov[inst] = (fids[0] if fids else None, inst.fold())
        return prov

    def id_provenance(rep: InstanceRepresentation) -> dict:
        return {
            inst: (inst.value(FACT_ID_ROLE) if inst.schema.has_fact_id() else None,
                   inst.schema.effective_fold())
            for inst in rep.all_instances()
        }

    fold_by_type = convert.s2c_type_folds(
        InstanceRepresentation.build(list(groups), extra_schemas=base_schemas))

    def s2c_provenance(rep: InstanceRepresentation) -> dict:
        return {inst: (None, fold_by_type[inst.schema.rel_type])
                for inst in rep.all_instances()}

    realized = len(test_keys_sorted) / len(keys)
    return SplitResult(
        g=DatasetBundle("G", g_train, g_test,
                        {**plain_provenance(g_train), **plain_provenance(g_test)}),
        g_id=DatasetBundle("G_id", gid_train, gid_test,
                           {**id_provenance(gid_train), **id_provenance(gid_test)}),
        g_s2c=DatasetBundle("G_s2c", s2c_train, s2c_test,
                            {**s2c_provenance(s2c_train), **s2c_provenance(s2c_test)},
                            fold_by_type=fold_by_type),
        seed=seed,
        requested_test_fraction=test_fraction,
        realized_test_fraction=realized,
    )


def _fmt_floats(arr: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in arr)


def save_model(model: CostModel, path: str | Path, config_digest: str = "-",
               header: Sequence[str] = ()) -> None:
    """Versioned line-oriented text dump; reloads bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(f"model-format {MODEL_FORMAT_VERSION}\n")
        fh.write(f"kind {model.kind}\n")
        fh.write(f"dim {model.embedding.dim}\n")
        fh.write(f"config {config_digest}\n")
        fids = sorted(model.fact_ids)
        fh.write(f"fact-ids {len(fids)}\n")
        for fid in fids:
            fh.write(f"f {fid}\n")
        names = model.embedding.entity_list()
        fh.write(f"entities {len(names)}\n")
        for name in names:
            fh.write(f"e {name} {_fmt_floats(model.embedding.vector(name))}\n")
        fh.write(f"relations {len(model.relations)}\n")
        for rt in sorted(model.relations):
            rel = model.relations[rt]
            fh.write(f"r {rt}\n")
            fh.write(f"n {_fmt_floats(rel.normal)}\n")
            if isinstance(rel, TransHRelation):
                fh.write(f"d {_fmt_floats(rel.translation)}\n")
            else:
                fh.write(f"b {_fmt_floats(rel.offset)}\n")
                weights = " ".join(f"{role}={rel.role_weights[role]!r}"
                                   for role in sorted(rel.role_weights))
                fh.write(f"a {weights}\n")


class _ModelReader:
    def __init__(self, path: str | Path):
        self.path = str(path)
        with open(path, encoding="utf-8") as fh:
            self.lines = [ln.rstrip("\n") for ln in fh]
        self.pos = 0

    def next_line(self, what: str) -> str:
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            self.pos += 1
            if line.strip() and not line.startswith("#"):
                return line
        raise DataError(f"truncated model file: expected {what}", self.path)

    def expect(self, key: str) -> str:
        line = self.next_line(key)
        head, _, rest = line.partition(" ")
        if head != key:
            raise DataError(f"expected {key!r} line, found {head!r}", self.path)
        return rest


def _parse_vector(text: str, dim: int, what: str, path: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != dim:
        raise DataError(f"{what}: expected {dim} components, found {len(parts)}", path)
    try:
        arr = np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError:
        raise DataError(f"{what}: bad float", path) from None
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what}: non-finite component in {path}")
    return arr


def load_model(path: str | Path) -> CostModel:
    reader = _ModelReader(path)
    version = reader.expect("model-format")
    if version != str(MODEL_FORMAT_VERSION):
        raise DataError(f"unsupported model format {version!r}", reader.path)
    kind = reader.expect("kind")
    if kind not in (TRANSH, MTRANSH):
        raise DataError(f"unknown model kind {kind!r}", reader.path)
    try:
        dim = int(reader.expect("dim"))
    except ValueError:
        raise DataError("bad dim header", reader.path) from None
    reader.expect("config")

    n_fids = int(reader.expect("fact-ids"))
    fact_ids = frozenset(reader.expect("f") for _ in range(n_fids))

    table = EmbeddingTable(dim)
    for _ in range(int(reader.expect("entities"))):
        rest = reader.expect("e")
        name, _, vec = rest.partition(" ")
        table.set(name, _parse_vector(vec, dim, f"entity {name!r}", reader.path))

    relations: dict[RelTypeId, TransHRelation | MultiFoldRelation] = {}
    for _ in range(int(reader.expect("relations"))):
        rt = reader.expect("r")
        normal = _parse_vector(reader.expect("n"), dim, f"{rt!r} normal", reader.path)
        if kind == TRANSH:
            d = _parse_vector(reader.expect("d"), dim, f"{rt!r} translation", reader.path)
            relations[rt] = TransHRelation(normal, d)
        else:
            b = _parse_vector(reader.expect("b"), dim, f"{rt!r} offset", reader.path)
            weights: dict[str, float] = {}
            for token in reader.expect("a").split():
                role, eq, value = token.partition("=")
                if not eq:
                    raise DataError(f"{rt!r}: malformed weight {token!r}", reader.path)
                weights[role] = float(value)
            relations[rt] = MultiFoldRelation(normal, b, weights)
    return CostModel(kind=kind, embedding=table, relations=relations, fact_ids=fact_ids)
