"""Hyperplane-projection cost models and their analytic gradients.

Two model kinds share one entity embedding table:

* ``transh``: per binary relation, a hyperplane normal and an in-plane
  translation; the cost of a pair (x, y) is
  ``|| P(x) + translation - P(y) ||^2`` with P the projection onto the
  relation's hyperplane.
* ``mtransh``: per relation of any arity, a normal, an offset vector and
  one scalar weight per role; the cost of a full role assignment is
  ``|| sum_role weight * P(vector) + offset ||^2``.

A ``transh`` model can also score a whole instance by summing the pair
costs of its role pairs ("decomposed" scoring), using the same triple
relation types the clique conversion produces.  All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from .convert import pair_label, pair_rel_type
from .kb import DataError, EntityId, Instance, RelTypeId, RoleId

TRANSH = "transh"
MTRANSH = "mtransh"

Vector = np.ndarray


class NumericError(Exception):
    """Non-finite values where finite numbers are required."""


def project(normal: Vector, z: Vector) -> Vector:
    """Remove from ``z`` its component along ``normal`` (scaled by ||normal||^2)."""
    if normal.shape != z.shape:
        raise ValueError(f"dimension mismatch: {normal.shape} vs {z.shape}")
    return z - (z @ normal) * normal


@dataclass
class TransHRelation:
    """Parameters of one binary relation: hyperplane normal and translation."""

    normal: Vector
    translation: Vector

    def copy(self) -> "TransHRelation":
        return TransHRelation(self.normal.copy(), self.translation.copy())

    def arrays(self) -> list[Vector]:
        return [self.normal, self.translation]


@dataclass
class MultiFoldRelation:
    """Parameters of one relation of any arity: normal, offset, role weights."""

    normal: Vector
    offset: Vector
    role_weights: dict[RoleId, float]

    def copy(self) -> "MultiFoldRelation":
        return MultiFoldRelation(self.normal.copy(), self.offset.copy(), dict(self.role_weights))

    def arrays(self) -> list[Vector]:
        return [self.normal, self.offset]


RelationParams = TransHRelation | MultiFoldRelation


class EmbeddingTable:
    """Entity name to float64 vector, all of one dimension."""

    def __init__(self, dim: int, vectors: Mapping[EntityId, Vector] | None = None):
        if dim < 1:
            raise ValueError("embedding dimension must be positive")
        self.dim = dim
        self.vectors: dict[EntityId, Vector] = {}
        for name, vec in (vectors or {}).items():
            self.set(name, vec)

    def set(self, name: EntityId, vec: Vector) -> None:
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (self.dim,):
            raise ValueError(f"vector for {name!r} has shape {arr.shape}, want ({self.dim},)")
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite embedding for {name!r}")
        self.vectors[name] = arr

    def vector(self, name: EntityId) -> Vector:
        try:
            return self.vectors[name]
        except KeyError:
            raise KeyError(f"no embedding for entity {name!r}") from None

    def __contains__(self, name: EntityId) -> bool:
        return name in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def entity_list(self) -> list[EntityId]:
        return sorted(self.vectors)


def transh_pair_cost(rel: TransHRelation, x: Vector, y: Vector) -> float:
    """Squared distance between the projected head (shifted) and projected tail."""
    w = x - y
    s = w - (w @ rel.normal) * rel.normal + rel.translation
    return float(s @ s)


def _mtransh_residual(rel: MultiFoldRelation, roles: Iterable[RoleId],
                      role_vectors: Mapping[RoleId, Vector]) -> Vector:
    w = None
    for role in roles:
        term = rel.role_weights[role] * role_vectors[role]
        w = term if w is None else w + term
    return w - (w @ rel.normal) * rel.normal + rel.offset


def mtransh_cost(rel: MultiFoldRelation, role_vectors: Mapping[RoleId, Vector]) -> float:
    """Squared norm of the weighted projected role vectors plus the offset."""
    if set(role_vectors) != set(rel.role_weights):
        raise ValueError(
            f"role mismatch: got {sorted(role_vectors)}, want {sorted(rel.role_weights)}"
        )
    s = _mtransh_residual(rel, sorted(rel.role_weights), role_vectors)
    return float(s @ s)


def decomposed_cost(role_vectors: Mapping[RoleId, Vector],
                    pair_params: Mapping[tuple[RoleId, RoleId], TransHRelation]) -> float:
    """Sum of pair costs over all role pairs, in canonical role order."""
    total = 0.0
    for r1, r2 in combinations(sorted(role_vectors), 2):
        try:
            rel = pair_params[(r1, r2)]
        except KeyError:
            raise KeyError(f"no pair parameters for roles ({r1!r}, {r2!r})") from None
        total += transh_pair_cost(rel, role_vectors[r1], role_vectors[r2])
    return total


def transh_penalty(rel: TransHRelation) -> float:
    """Soft-constraint residual: unit-length normal, translation in-plane."""
    n, d = rel.normal, rel.translation
    return float(((n @ n) - 1.0) ** 2 + (n @ d) ** 2)


def mtransh_penalty(rel: MultiFoldRelation) -> float:
    """Soft-constraint residual: unit normal, orthogonal unit offset."""
    n, b = rel.normal, rel.offset
    return float(((n @ n) - 1.0) ** 2 + (n @ b) ** 2 + ((b @ b) - 1.0) ** 2)


def constraint_penalty(relations: Mapping[RelTypeId, RelationParams], weight: float) -> float:
    """Weighted sum of the per-relation soft-constraint residuals."""
    if weight == 0.0:
        return 0.0
    total = 0.0
    for rt in sorted(relations):
        rel = relations[rt]
        total += transh_penalty(rel) if isinstance(rel, TransHRelation) else mtransh_penalty(rel)
    return weight * total


@dataclass
class SparseGradient:
    """Partial derivatives touched by one item; absent keys mean zero."""

    entities: dict[EntityId, Vector] = field(default_factory=dict)
    normals: dict[RelTypeId, Vector] = field(default_factory=dict)
    translations: dict[RelTypeId, Vector] = field(default_factory=dict)
    offsets: dict[RelTypeId, Vector] = field(default_factory=dict)
    role_weights: dict[RelTypeId, dict[RoleId, float]] = field(default_factory=dict)

    def add_entity(self, name: EntityId, grad: Vector) -> None:
        if name in self.entities:
            self.entities[name] = self.entities[name] + grad
        else:
            self.entities[name] = grad

    def _merge(self, table: dict, key, grad) -> None:
        table[key] = table[key] + grad if key in table else grad

    def update(self, other: "SparseGradient", scale: float = 1.0) -> None:
        for k, v in other.entities.items():
            self._merge(self.entities, k, scale * v)
        for k, v in other.normals.items():
            self._merge(self.normals, k, scale * v)
        for k, v in other.translations.items():
            self._merge(self.translations, k, scale * v)
        for k, v in other.offsets.items():
            self._merge(self.offsets, k, scale * v)
        for rt, ws in other.role_weights.items():
            slot = self.role_weights.setdefault(rt, {})
            for role, g in ws.items():
                slot[role] = slot.get(role, 0.0) + scale * g


def transh_gradients(rel_type: RelTypeId, rel: TransHRelation,
                     x_id: EntityId, x: Vector, y_id: EntityId, y: Vector,
                     sign: float = 1.0) -> SparseGradient:
    """Analytic partials of the pair cost times ``sign``."""
    n, d = rel.normal, rel.translation
    w = x - y
    s = w - (w @ n) * n + d
    ps = s - (s @ n) * n
    grad = SparseGradient()
    grad.add_entity(x_id, (2.0 * sign) * ps)
    grad.add_entity(y_id, (-2.0 * sign) * ps)
    grad.translations[rel_type] = (2.0 * sign) * s
    grad.normals[rel_type] = (-2.0 * sign) * ((s @ n) * w + (w @ n) * s)
    return grad


def mtransh_gradients(rel_type: RelTypeId, rel: MultiFoldRelation,
                      role_entities: Mapping[RoleId, EntityId],
                      role_vectors: Mapping[RoleId, Vector],
                      sign: float = 1.0, with_weights: bool = True,
                      roles: tuple[RoleId, ...] | None = None) -> SparseGradient:
    """Analytic partials of the instance cost times ``sign``.

    Entities filling several roles accumulate the partial of each role.
    """
    n, b = rel.normal, rel.offset
    if roles is None:
        roles = tuple(sorted(rel.role_weights))
    w = None
    for role in roles:
        term = rel.role_weights[role] * role_vectors[role]
        w = term if w is None else w + term
    s = w - (w @ n) * n + b
    ps = s - (s @ n) * n
    grad = SparseGradient()
    for role in roles:
        grad.add_entity(role_entities[role], (2.0 * sign * rel.role_weights[role]) * ps)
    grad.offsets[rel_type] = (2.0 * sign) * s
    grad.normals[rel_type] = (-2.0 * sign) * ((s @ n) * w + (w @ n) * s)
    if with_weights:
        weights = {}
        for role in roles:
            v = role_vectors[role]
            pv = v - (v @ n) * n
            weights[role] = float(2.0 * sign * (pv @ s))
        grad.role_weights[rel_type] = weights
    return grad


def transh_penalty_gradient(rel_type: RelTypeId, rel: TransHRelation, weight: float) -> SparseGradient:
    n, d = rel.normal, rel.translation
    grad = SparseGradient()
    grad.normals[rel_type] = weight * (4.0 * ((n @ n) - 1.0) * n + 2.0 * (n @ d) * d)
    grad.translations[rel_type] = weight * (2.0 * (n @ d) * n)
    return grad


def mtransh_penalty_gradient(rel_type: RelTypeId, rel: MultiFoldRelation, weight: float) -> SparseGradient:
    n, b = rel.normal, rel.offset
    grad = SparseGradient()
    grad.normals[rel_type] = weight * (4.0 * ((n @ n) - 1.0) * n + 2.0 * (n @ b) * b)
    grad.offsets[rel_type] = weight * (2.0 * (n @ b) * n + 4.0 * ((b @ b) - 1.0) * b)
    return grad


def penalty_gradient(rel_type: RelTypeId, rel: RelationParams, weight: float) -> SparseGradient:
    if isinstance(rel, TransHRelation):
        return transh_penalty_gradient(rel_type, rel, weight)
    return mtransh_penalty_gradient(rel_type, rel, weight)


@dataclass
class CostModel:
    """An embedding table plus per-relation parameters of one model kind.

    ``fact_ids`` marks embedded entities that are fact names rather than
    real entities; ranking never offers them as candidates.
    """

    kind: str
    embedding: EmbeddingTable
    relations: dict[RelTypeId, RelationParams]
    fact_ids: frozenset[EntityId] = frozenset()

    def __post_init__(self) -> None:
        if self.kind not in (TRANSH, MTRANSH):
            raise ValueError(f"unknown model kind {self.kind!r}")

    def relation(self, rel_type: RelTypeId) -> RelationParams:
        try:
            return self.relations[rel_type]
        except KeyError:
            raise KeyError(f"no parameters for relation {rel_type!r}") from None

    def transh_cost(self, rel_type: RelTypeId, x: Vector, y: Vector) -> float:
        rel = self.relation(rel_type)
        if not isinstance(rel, TransHRelation):
            raise ValueError(f"relation {rel_type!r} is not a pairwise relation")
        return transh_pair_cost(rel, np.asarray(x, float), np.asarray(y, float))

    def mtransh_cost(self, rel_type: RelTypeId, role_vectors: Mapping[RoleId, Vector]) -> float:
        rel = self.relation(rel_type)
        if not isinstance(rel, MultiFoldRelation):
            raise ValueError(f"relation {rel_type!r} is not a multi-fold relation")
        return mtransh_cost(rel, role_vectors)

    def instance_cost(self, inst: Instance) -> float:
        """Cost of one instance under the model's own scoring rule."""
        vecs = [self.embedding.vector(e) for e in inst.entities]
        if self.kind == TRANSH:
            if inst.fold() != 2:
                raise ValueError(
                    f"pairwise model cannot score {inst.fold()}-ary instance directly;"
                    " use decomposed_instance_cost"
                )
            return self.transh_cost(inst.schema.rel_type, vecs[0], vecs[1])
        rel = self.relation(inst.schema.rel_type)
        if not isinstance(rel, MultiFoldRelation):
            raise ValueError(f"relation {inst.schema.rel_type!r} is not a multi-fold relation")
        role_vectors = dict(zip(inst.schema.roles, vecs))
        return mtransh_cost(rel, role_vectors)

    def decomposed_instance_cost(self, inst: Instance) -> float:
        """Instance cost as the sum of its pairwise triple costs.

        Role pairs bound to the same entity are skipped, mirroring the
        triples the clique conversion actually produces (and trains on).
        """
        if self.kind != TRANSH:
            raise ValueError("decomposed scoring needs a pairwise model")
        total = 0.0
        for r1, r2 in combinations(inst.schema.roles, 2):
            x, y = inst.value(r1), inst.value(r2)
            if x == y:
                continue
            rt = pair_rel_type(inst.schema.rel_type, pair_label(r1, r2))
            total += self.transh_cost(rt, self.embedding.vector(x), self.embedding.vector(y))
        return total

    def item_gradients(self, inst: Instance, sign: float = 1.0,
                       with_weights: bool = True) -> SparseGradient:
        """Partials of ``instance_cost`` for every touched entity and parameter."""
        if self.kind == TRANSH:
            if inst.fold() != 2:
                raise ValueError("pairwise model gradients need a binary instance")
            rt = inst.schema.rel_type
            rel = self.relation(rt)
            x_id, y_id = inst.entities
            return transh_gradients(rt, rel, x_id, self.embedding.vector(x_id),
                                    y_id, self.embedding.vector(y_id), sign)
        rt = inst.schema.rel_type
        rel = self.relation(rt)
        role_entities = dict(zip(inst.schema.roles, inst.entities))
        role_vectors = {r: self.embedding.vector(e) for r, e in role_entities.items()}
        return mtransh_gradients(rt, rel, role_entities, role_vectors, sign, with_weights,
                                 roles=inst.schema.roles)

    def decomposed_item_gradients(self, inst: Instance, sign: float = 1.0) -> SparseGradient:
        """Partials of ``decomposed_instance_cost``, summed over the role pairs."""
        if self.kind != TRANSH:
            raise ValueError("decomposed gradients need a pairwise model")
        grad = SparseGradient()
        for r1, r2 in combinations(inst.schema.roles, 2):
            x, y = inst.value(r1), inst.value(r2)
            if x == y:
                continue
            rt = pair_rel_type(inst.schema.rel_type, pair_label(r1, r2))
            rel = self.relation(rt)
            if not isinstance(rel, TransHRelation):
                raise ValueError(f"relation {rt!r} is not a pairwise relation")
            grad.update(transh_gradients(rt, rel, x, self.embedding.vector(x),
                                         y, self.embedding.vector(y), sign))
        return grad

    def penalty(self, weight: float) -> float:
        return constraint_penalty(self.relations, weight)

    def enforce_strict(self, rel_types: Iterable[RelTypeId]) -> None:
        """Renormalize normals and re-orthogonalize shift vectors in place."""
        for rt in rel_types:
            rel = self.relation(rt)
            norm = float(np.linalg.norm(rel.normal))
            if norm > 0.0:
                rel.normal /= norm
            shift = rel.translation if isinstance(rel, TransHRelation) else rel.offset
            shift -= (shift @ rel.normal) * rel.normal
