"""Margin-based stochastic gradient training with per-role negative sampling.

Training modes mirror the three dataset shapes:

* ``transh-triple``: pairwise model on a binary (triple) representation,
  one negative per triple;
* ``m-transh``: multi-fold model on instances, one negative per role pair
  of each instance (so the negative budget matches the pairwise run on the
  same data's clique conversion);
* ``m-transh-id``: as ``m-transh`` on id-carrying instances; fact-id slots
  are embedded but never corrupted, and the budget counts real roles only.

Runs are deterministic: one seeded generator drives initialization,
negative sampling and batch order, and instances are always visited in
canonical order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from bisect import bisect_left
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .kb import (
    FACT_ID_ROLE,
    DataError,
    EntityId,
    Instance,
    InstanceRepresentation,
    RelationSchema,
    RelTypeId,
    RoleId,
    validate,
)
from .models import (
    MTRANSH,
    TRANSH,
    CostModel,
    EmbeddingTable,
    MultiFoldRelation,
    SparseGradient,
    TransHRelation,
    penalty_gradient,
)

logger = logging.getLogger(__name__)

MODES = ("transh-triple", "m-transh", "m-transh-id")


@dataclass
class TrainConfig:
    dim: int = 25
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 500
    batch_size: int = 128
    penalty_weight: float = 0.25
    seed: int = 0
    mode: str = "m-transh"
    strict_constraints: bool = False
    freeze_role_weights: bool = False
    reject_known_positives: bool = False

    def validate(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        payload = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class NegativeExample:
    """A positive instance with one role reassigned to a different entity."""

    source: Instance
    corrupted_role: RoleId
    replacement: EntityId

    def corrupted(self) -> Instance:
        return self.source.replace(self.corrupted_role, self.replacement)


def pair_loss(f_pos: float, f_neg: float, margin: float) -> float:
    """Positive cost plus the hinge pushing the negative cost above the margin."""
    return f_pos + max(0.0, margin - f_neg)


def count_negatives(inst: Instance, mode: str) -> int:
    """Negatives drawn for one item: one per triple, or one per role pair."""
    if mode == "transh-triple":
        return 1
    j = inst.schema.effective_fold()
    return j * (j - 1) // 2


def negative_budget(rep: InstanceRepresentation, mode: str) -> int:
    """Total negatives one epoch draws for ``rep`` under ``mode``."""
    return sum(count_negatives(inst, mode) for inst in rep.all_instances())


def sample_negatives(
    inst: Instance,
    count: int,
    entity_pool: Sequence[EntityId],
    rng: np.random.Generator,
    roles: Sequence[RoleId] | None = None,
    pool_index: Mapping[EntityId, int] | None = None,
) -> list[NegativeExample]:
    """Draw ``count`` negatives, each corrupting one uniformly chosen role.

    The replacement is uniform over ``entity_pool`` minus the role's current
    entity.  ``entity_pool`` must be sorted; pass ``pool_index`` to skip the
    per-call position lookup.  Fact-id slots are never corrupted.
    """
    if len(entity_pool) < 2:
        raise ValueError("entity pool needs at least two entities")
    if roles is None:
        roles = [r for r in inst.schema.roles if r != FACT_ID_ROLE]
    if not roles:
        raise ValueError(f"instance {inst.describe()} has no corruptible roles")
    out: list[NegativeExample] = []
    n_pool = len(entity_pool)
    for _ in range(count):
        role = roles[int(rng.integers(len(roles)))]
        original = inst.value(role)
        if pool_index is not None:
            pos = pool_index.get(original, -1)
        else:
            i = bisect_left(entity_pool, original)
            pos = i if i < n_pool and entity_pool[i] == original else -1
        effective = n_pool - (1 if pos >= 0 else 0)
        if effective < 1:
            raise ValueError("entity pool has no replacement candidates")
        k = int(rng.integers(effective))
        if pos >= 0 and k >= pos:
            k += 1
        out.append(NegativeExample(inst, role, entity_pool[k]))
    return out


def init_params(
    entities: Sequence[EntityId],
    schemas: Mapping[RelTypeId, RelationSchema],
    config: TrainConfig,
    rng: np.random.Generator,
) -> CostModel:
    """Fresh model parameters; fully determined by the generator state.

    Entity components are uniform in +-6/sqrt(dim).  Normals are random
    unit vectors; shift vectors are random unit vectors orthogonal to their
    normal.  Role weights start at +1 for the first role in canonical order
    and -1/(J-1) for the rest, which makes a binary relation start as an
    exact pairwise model.
    """
    dim = config.dim
    bound = 6.0 / math.sqrt(dim)
    table = EmbeddingTable(dim)
    for name in sorted(entities):
        table.set(name, rng.uniform(-bound, bound, dim))

    kind = TRANSH if config.mode == "transh-triple" else MTRANSH
    relations: dict[RelTypeId, TransHRelation | MultiFoldRelation] = {}
    for rt in sorted(schemas):
        schema = schemas[rt]
        normal = rng.standard_normal(dim)
        normal /= np.linalg.norm(normal)
        shift = rng.standard_normal(dim)
        shift -= (shift @ normal) * normal
        shift /= np.linalg.norm(shift)
        if kind == TRANSH:
            relations[rt] = TransHRelation(normal, shift)
        else:
            j = schema.fold()
            weights = {role: (1.0 if i == 0 else -1.0 / (j - 1))
                       for i, role in enumerate(schema.roles)}
            relations[rt] = MultiFoldRelation(normal, shift, weights)
    return CostModel(kind=kind, embedding=table, relations=relations)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    penalty: float
    elapsed_ms: int

    def format(self) -> str:
        return f"epoch {self.epoch} loss {self.loss!r} penalty {self.penalty!r} elapsed_ms {self.elapsed_ms}"


def format_log(records: Sequence[EpochRecord]) -> str:
    return "".join(rec.format() + "\n" for rec in records)


def _fact_id_values(rep: InstanceRepresentation) -> frozenset[EntityId]:
    values: set[EntityId] = set()
    for rt, schema in rep.schemas.items():
        if schema.has_fact_id():
            for inst in rep.instances[rt]:
                values.add(inst.value(FACT_ID_ROLE))
    return frozenset(values)


def _check_trainable(rep: InstanceRepresentation, config: TrainConfig) -> None:
    problems = validate(rep)
    if problems:
        raise DataError(f"representation invalid: {problems[0]} (+{len(problems) - 1} more)"
                        if len(problems) > 1 else f"representation invalid: {problems[0]}")
    for rt, group in rep.instances.items():
        if not group:
            raise DataError(f"relation {rt!r} has no instances")
    for rt, schema in rep.schemas.items():
        if schema.effective_fold() < 2:
            raise DataError(f"relation {rt!r} has arity {schema.effective_fold()} (< 2)")
        if config.mode == "transh-triple" and schema.fold() != 2:
            raise DataError(f"mode transh-triple needs binary relations, {rt!r} is {schema.fold()}-ary")
        if config.mode != "m-transh-id" and schema.has_fact_id():
            raise DataError(f"relation {rt!r} carries fact ids; use mode m-transh-id")


def _apply_batch(model: CostModel, grad: SparseGradient, scale: float) -> bool:
    """Scaled gradient step; refuses the whole step if anything goes non-finite."""
    entity_new = {}
    for name, g in grad.entities.items():
        entity_new[name] = model.embedding.vectors[name] - scale * g
    rel_new: dict[RelTypeId, list] = {}
    for rt, g in grad.normals.items():
        rel_new.setdefault(rt, [None, None, None])[0] = model.relations[rt].normal - scale * g
    for rt, g in grad.translations.items():
        rel_new.setdefault(rt, [None, None, None])[1] = model.relations[rt].translation - scale * g
    for rt, g in grad.offsets.items():
        rel_new.setdefault(rt, [None, None, None])[1] = model.relations[rt].offset - scale * g
    for rt, ws in grad.role_weights.items():
        rel = model.relations[rt]
        rel_new.setdefault(rt, [None, None, None])[2] = {
            role: rel.role_weights[role] - scale * g for role, g in ws.items()
        }

    for arr in entity_new.values():
        if not math.isfinite(float(np.sum(arr))):
            return False
    for new_n, new_shift, new_w in rel_new.values():
        for arr in (new_n, new_shift):
            if arr is not None and not math.isfinite(float(np.sum(arr))):
                return False
        if new_w is not None and not all(math.isfinite(v) for v in new_w.values()):
            return False

    for name, arr in entity_new.items():
        model.embedding.vectors[name] = arr
    for rt, (new_n, new_shift, new_w) in rel_new.items():
        rel = model.relations[rt]
        if new_n is not None:
            rel.normal = new_n
        if new_shift is not None:
            if isinstance(rel, TransHRelation):
                rel.translation = new_shift
            else:
                rel.offset = new_shift
        if new_w is not None:
            rel.role_weights.update(new_w)
    return True


def train(rep: InstanceRepresentation, config: TrainConfig) -> tuple[CostModel, list[EpochRecord]]:
    """Minimize positive costs and the margin hinge on sampled negatives.

    Returns the trained model and one record per epoch (mean pair loss,
    soft-constraint penalty, wall time).  With a fixed seed the result is
    bit-reproducible.
    """
    config.validate()
    _check_trainable(rep, config)

    fact_ids = _fact_id_values(rep) if config.mode == "m-transh-id" else frozenset()
    pool = sorted(rep.entities - fact_ids)
    if len(pool) < 2:
        raise DataError("need at least two non-id entities to sample negatives")
    pool_index = {name: i for i, name in enumerate(pool)}

    rng = np.random.default_rng(config.seed)
    model = init_params(sorted(rep.entities), rep.schemas, config, rng)
    model.fact_ids = fact_ids

    instances = rep.all_instances()
    known = set(instances) if config.reject_known_positives else None
    records: list[EpochRecord] = []
    with_weights = model.kind == MTRANSH and not config.freeze_role_weights

    for epoch in range(config.epochs):
        started = time.monotonic()
        pairs: list[tuple[Instance, NegativeExample]] = []
        for inst in instances:
            negs = sample_negatives(inst, count_negatives(inst, config.mode), pool, rng,
                                    pool_index=pool_index)
            if known is not None:
                negs = [
                    _resample_unknown(n, pool, rng, pool_index, known) for n in negs
                ]
            pairs.extend((inst, neg) for neg in negs)
        order = rng.permutation(len(pairs))

        loss_sum = 0.0
        skipped = 0
        # overflow in a divergent step is handled by the update guard below
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                grad = SparseGradient()
                touched: set[RelTypeId] = set()
                for idx in batch:
                    pos, neg = pairs[int(idx)]
                    rt = pos.schema.rel_type
                    touched.add(rt)
                    f_pos = model.instance_cost(pos)
                    grad.update(model.item_gradients(pos, sign=1.0,
                                                     with_weights=with_weights))
                    corrupted = neg.corrupted()
                    f_neg = model.instance_cost(corrupted)
                    if f_neg < config.margin:
                        grad.update(model.item_gradients(corrupted, sign=-1.0,
                                                         with_weights=with_weights))
                    loss_sum += pair_loss(f_pos, f_neg, config.margin)
                    if config.penalty_weight > 0.0:
                        grad.update(penalty_gradient(rt, model.relations[rt],
                                                     config.penalty_weight))
                scale = config.learning_rate / len(batch)
                if _apply_batch(model, grad, scale):
                    if config.strict_constraints:
                        model.enforce_strict(sorted(touched))
                else:
                    skipped += 1

        if skipped:
            logger.warning("epoch %d: %d non-finite update(s) rejected", epoch, skipped)
        elapsed = int((time.monotonic() - started) * 1000)
        mean_loss = loss_sum / len(pairs) if pairs else 0.0
        records.append(EpochRecord(epoch, mean_loss, model.penalty(config.penalty_weight), elapsed))
    return model, records


def _resample_unknown(neg: NegativeExample, pool, rng, pool_index, known, tries: int = 20):
    """Redraw a negative while it collides with a known positive."""
    for _ in range(tries):
        if neg.corrupted() not in known:
            return neg
        neg = sample_negatives(neg.source, 1, pool, rng, pool_index=pool_index)[0]
    return neg
