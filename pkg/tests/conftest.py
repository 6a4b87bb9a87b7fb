"""Shared toy knowledge bases and random-data builders."""

from __future__ import annotations

import numpy as np
import pytest

from multifold import (
    Fact,
    FactRepresentation,
    Instance,
    InstanceRepresentation,
    RelationSchema,
)


def build_award_rep() -> InstanceRepresentation:
    """Two 3-ary instances sharing one entity; five entities total."""
    awarded = RelationSchema.define("awarded", ("award", "season", "winner"))
    roster = RelationSchema.define("roster", ("player", "position", "team"))
    return InstanceRepresentation.build([
        Instance.from_assignment(awarded, {"award": "golden_boot", "season": "s14",
                                           "winner": "messi"}),
        Instance.from_assignment(roster, {"player": "messi", "position": "forward",
                                          "team": "barcelona"}),
    ])


def build_credit_facts() -> FactRepresentation:
    """One meta-relation with a two-entity role set and a degenerate fact."""
    credit = RelationSchema.define("credit", ("artist", "track", "instrument"))
    u1 = Fact.from_assignment(credit, "u1", {
        "artist": ["mia"], "track": ["night_train"],
        "instrument": ["bass", "bass_guitar"],
    })
    u2 = Fact.from_assignment(credit, "u2", {
        "artist": ["theo"], "track": ["daybreak"], "instrument": ["violin"],
    })
    return FactRepresentation.build([u1, u2])


def random_fact_rep(rng: np.random.Generator, max_facts: int = 50, max_roles: int = 4,
                    max_set_size: int = 3, n_entities: int = 30,
                    n_meta: int = 4) -> FactRepresentation:
    """Random fact representation within the stated size bounds."""
    entities = [f"n{i}" for i in range(n_entities)]
    schemas = []
    for q in range(n_meta):
        arity = int(rng.integers(1, max_roles + 1))
        roles = [f"q{q}_r{k}" for k in range(arity)]
        schemas.append(RelationSchema.define(f"meta{q}", roles))
    facts = []
    n_facts = int(rng.integers(1, max_facts + 1))
    for i in range(n_facts):
        schema = schemas[int(rng.integers(len(schemas)))]
        assignment = {}
        for role in schema.roles:
            size = int(rng.integers(1, max_set_size + 1))
            chosen = rng.choice(len(entities), size=size, replace=False)
            assignment[role] = [entities[int(c)] for c in chosen]
        facts.append(Fact.from_assignment(schema, f"fact{i}", assignment))
    return FactRepresentation.build(facts)


@pytest.fixture
def award_rep() -> InstanceRepresentation:
    return build_award_rep()


@pytest.fixture
def credit_facts() -> FactRepresentation:
    return build_credit_facts()
