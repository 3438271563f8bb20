"""Typed user memory graph: ontology, construction, updates, queries, and masks.

The graph is the single source of truth for what an agent may talk about in a
dialog: which items are recommendable, which slots/values exist, and which
preferences have been observed so far. Triples are append-only within a
dialog; the triple sequence doubles as the update log.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterator


class OntologyError(ValueError):
    """A triple or entity violates the ontology signature table."""


class UnknownEntityError(KeyError):
    """Lookup of an entity that is not registered in the graph."""


class EntityKind(Enum):
    USER = "user"
    MEMORY = "memory"
    ITEM = "item"
    SLOT = "slot"
    VALUE = "value"


class RelationKind(Enum):
    HAS_MEMORY = "has_memory"
    VISITED = "visited"
    HAS_ASPECT = "has_aspect"
    IS_A = "is_a"
    POS_ON = "pos_on"
    NEG_ON = "neg_on"
    NEU_ON = "neu_on"


SENTIMENT_RELATIONS = (RelationKind.POS_ON, RelationKind.NEG_ON, RelationKind.NEU_ON)

# head kind -> allowed tail kinds, per relation
SIGNATURES: dict[RelationKind, tuple[EntityKind, tuple[EntityKind, ...]]] = {
    RelationKind.HAS_MEMORY: (EntityKind.USER, (EntityKind.MEMORY,)),
    RelationKind.VISITED: (EntityKind.MEMORY, (EntityKind.ITEM,)),
    RelationKind.HAS_ASPECT: (EntityKind.ITEM, (EntityKind.VALUE,)),
    RelationKind.IS_A: (EntityKind.VALUE, (EntityKind.SLOT,)),
    RelationKind.POS_ON: (EntityKind.MEMORY, (EntityKind.VALUE, EntityKind.ITEM)),
    RelationKind.NEG_ON: (EntityKind.MEMORY, (EntityKind.VALUE, EntityKind.ITEM)),
    RelationKind.NEU_ON: (EntityKind.MEMORY, (EntityKind.VALUE, EntityKind.ITEM)),
}

_KIND_ORDER = {k: i for i, k in enumerate(EntityKind)}
_REL_ORDER = {r: i for i, r in enumerate(RelationKind)}

# 14 message-passing types: each stored relation plus its reversed twin.
# Reversed twins exist only in this export, never as stored triples.
MESSAGE_RELATIONS: tuple[tuple[RelationKind, bool], ...] = tuple(
    (rel, reverse) for rel in RelationKind for reverse in (False, True)
)


@dataclass(frozen=True, eq=False)
class EntityId:
    """Graph-local handle: dense ``index`` within ``kind``."""

    kind: EntityKind
    index: int

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"entity index must be non-negative, got {self.index}")
        # hot path: these ids key every adjacency dict, so cache the hash
        object.__setattr__(self, "_hash", hash((_KIND_ORDER[self.kind], self.index)))

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EntityId)
            and self.index == other.index
            and self.kind is other.kind
        )

    def __lt__(self, other: "EntityId") -> bool:
        return self.sort_key() < other.sort_key()

    def sort_key(self) -> tuple[int, int]:
        return (_KIND_ORDER[self.kind], self.index)

    def ref(self) -> str:
        return f"{self.kind.value}:{self.index}"

    @staticmethod
    def from_ref(ref: str) -> "EntityId":
        kind, _, idx = ref.partition(":")
        return EntityId(EntityKind(kind), int(idx))


@dataclass(frozen=True, eq=False)
class Triple:
    head: EntityId
    relation: RelationKind
    tail: EntityId

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "_hash",
            hash((self.head, _REL_ORDER[self.relation], self.tail)),
        )

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Triple)
            and self.head == other.head
            and self.relation is other.relation
            and self.tail == other.tail
        )

    def sort_key(self) -> tuple:
        return (self.head.sort_key(), _REL_ORDER[self.relation], self.tail.sort_key())


@dataclass(frozen=True)
class Observation:
    """One sentiment annotation from a user turn: polarity + opinion target."""

    sentiment: RelationKind
    target: EntityId

    def __post_init__(self) -> None:
        if self.sentiment not in SENTIMENT_RELATIONS:
            raise OntologyError(f"{self.sentiment.value} is not a sentiment relation")


@dataclass(frozen=True)
class PathStep:
    relation: RelationKind
    forward: bool  # False when the stored triple was traversed tail-to-head


@dataclass(frozen=True)
class ExplanationPath:
    """User-to-item path alternating entities and (possibly reversed) relations."""

    entities: tuple[EntityId, ...]
    steps: tuple[PathStep, ...]

    @property
    def hops(self) -> int:
        return len(self.steps)

    def sort_key(self) -> tuple:
        flat = []
        for entity, step in zip(self.entities, self.steps):
            flat.append(entity.sort_key())
            flat.append((_REL_ORDER[step.relation], 0 if step.forward else 1))
        flat.append(self.entities[-1].sort_key())
        return (self.hops, tuple(flat))

    def render(self, graph: "MemoryGraph") -> list[str]:
        out = [graph.name_of(self.entities[0])]
        for entity, step in zip(self.entities[1:], self.steps):
            rel = step.relation.value + ("" if step.forward else "^-1")
            out.extend([rel, graph.name_of(entity)])
        return out


class MemoryGraph:
    """Heterogeneous user memory graph with append-only triples.

    Value-semantic: ``copy()`` snapshots are cheap, and the module-level
    ``apply_observation`` returns a new version rather than mutating.
    """

    def __init__(self) -> None:
        self._names: dict[EntityKind, list[str]] = {k: [] for k in EntityKind}
        self._index: dict[tuple[EntityKind, str], EntityId] = {}
        self.triples: list[Triple] = []
        self._triple_set: set[Triple] = set()
        self._out: dict[tuple[EntityId, RelationKind], list[EntityId]] = {}
        self._in: dict[tuple[EntityId, RelationKind], list[EntityId]] = {}
        self._offsets: dict[EntityKind, int] | None = None
        self.user: EntityId | None = None
        self.m_history: EntityId | None = None
        self.m_cur_dialog: EntityId | None = None

    # -- entity registry -------------------------------------------------

    def add_entity(self, kind: EntityKind, name: str) -> EntityId:
        """Register (or return the existing) entity of ``kind`` named ``name``."""
        key = (kind, name)
        if key in self._index:
            return self._index[key]
        eid = EntityId(kind, len(self._names[kind]))
        self._names[kind].append(name)
        self._index[key] = eid
        self._offsets = None
        return eid

    def lookup(self, kind: EntityKind, name: str) -> EntityId:
        try:
            return self._index[(kind, name)]
        except KeyError:
            raise UnknownEntityError(f"no {kind.value} entity named {name!r}") from None

    def has_entity(self, entity: EntityId) -> bool:
        return 0 <= entity.index < len(self._names[entity.kind])

    def name_of(self, entity: EntityId) -> str:
        if not self.has_entity(entity):
            raise UnknownEntityError(f"unknown entity {entity.ref()}")
        return self._names[entity.kind][entity.index]

    def entities(self, kind: EntityKind | None = None) -> Iterator[EntityId]:
        kinds = [kind] if kind is not None else list(EntityKind)
        for k in kinds:
            for i in range(len(self._names[k])):
                yield EntityId(k, i)

    def n_entities(self, kind: EntityKind | None = None) -> int:
        if kind is not None:
            return len(self._names[kind])
        return sum(len(v) for v in self._names.values())

    # -- triples ----------------------------------------------------------

    def add_triple(self, head: EntityId, relation: RelationKind, tail: EntityId) -> bool:
        """Append a triple; returns False if the identical triple already exists."""
        for endpoint in (head, tail):
            if not self.has_entity(endpoint):
                raise UnknownEntityError(f"unknown entity {endpoint.ref()}")
        head_kind, tail_kinds = SIGNATURES[relation]
        if head.kind is not head_kind or tail.kind not in tail_kinds:
            raise OntologyError(
                f"({head.kind.value}, {relation.value}, {tail.kind.value}) violates "
                f"signature {head_kind.value} -> "
                f"{'|'.join(k.value for k in tail_kinds)}"
            )
        triple = Triple(head, relation, tail)
        if triple in self._triple_set:
            return False
        self.triples.append(triple)
        self._triple_set.add(triple)
        self._out.setdefault((head, relation), []).append(tail)
        self._in.setdefault((tail, relation), []).append(head)
        return True

    def has_triple(self, head: EntityId, relation: RelationKind, tail: EntityId) -> bool:
        return Triple(head, relation, tail) in self._triple_set

    def copy(self) -> "MemoryGraph":
        g = MemoryGraph()
        g._names = {k: list(v) for k, v in self._names.items()}
        g._index = dict(self._index)
        g.triples = list(self.triples)
        g._triple_set = set(self._triple_set)
        g._out = {k: list(v) for k, v in self._out.items()}
        g._in = {k: list(v) for k, v in self._in.items()}
        g.user, g.m_history, g.m_cur_dialog = self.user, self.m_history, self.m_cur_dialog
        return g

    # -- queries ----------------------------------------------------------

    def neighbors(
        self, entity: EntityId, relation: RelationKind, direction: str = "out"
    ) -> list[EntityId]:
        """Neighbors of ``entity`` under ``relation``, sorted by (kind, index).

        ``direction="out"`` follows stored triples head-to-tail, ``"in"`` the
        reverse. Unknown entities raise; no edges yields an empty list.
        """
        if not self.has_entity(entity):
            raise UnknownEntityError(f"unknown entity {entity.ref()}")
        if direction not in ("out", "in"):
            raise ValueError(f"direction must be 'out' or 'in', got {direction!r}")
        table = self._out if direction == "out" else self._in
        return sorted(table.get((entity, relation), []), key=EntityId.sort_key)

    def message_edges(self) -> dict[tuple[RelationKind, bool], tuple[list[int], list[int]]]:
        """Per-relation (src, dst) entity lists for message passing.

        Each stored triple contributes a forward edge head->tail and a reversed
        twin tail->head, giving 14 edge types. Entities are flattened to dense
        global indices in (kind, index) order via :meth:`global_index`.
        """
        edges: dict[tuple[RelationKind, bool], tuple[list[int], list[int]]] = {
            key: ([], []) for key in MESSAGE_RELATIONS
        }
        gi = self.global_index
        for t in self.triples:
            h, r, tl = gi(t.head), t.relation, gi(t.tail)
            fwd = edges[(r, False)]
            fwd[0].append(h)
            fwd[1].append(tl)
            rev = edges[(r, True)]
            rev[0].append(tl)
            rev[1].append(h)
        return edges

    def global_index(self, entity: EntityId) -> int:
        """Dense index over all entities, ordered by (kind, index)."""
        if self._offsets is None:
            offsets: dict[EntityKind, int] = {}
            total = 0
            for kind in EntityKind:
                offsets[kind] = total
                total += len(self._names[kind])
            self._offsets = offsets
        return self._offsets[entity.kind] + entity.index

    def entity_order(self) -> list[EntityId]:
        return list(self.entities())

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "entities": [
                {"kind": e.kind.value, "index": e.index, "name": self.name_of(e)}
                for e in self.entities()
            ],
            "triples": [
                [t.head.ref(), t.relation.value, t.tail.ref()] for t in self.triples
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_dict(payload: dict) -> "MemoryGraph":
        g = MemoryGraph()
        for ent in payload["entities"]:
            eid = g.add_entity(EntityKind(ent["kind"]), ent["name"])
            if eid.index != ent["index"]:
                raise OntologyError(f"non-dense entity index for {ent}")
        for head_ref, rel, tail_ref in payload["triples"]:
            g.add_triple(
                EntityId.from_ref(head_ref), RelationKind(rel), EntityId.from_ref(tail_ref)
            )
        users = list(g.entities(EntityKind.USER))
        memories = g._names[EntityKind.MEMORY]
        g.user = users[0] if users else None
        if "m_history" in memories:
            g.m_history = EntityId(EntityKind.MEMORY, memories.index("m_history"))
        if "m_cur_dialog" in memories:
            g.m_cur_dialog = EntityId(EntityKind.MEMORY, memories.index("m_cur_dialog"))
        return g

    def validate(self) -> None:
        """Re-check structural invariants; raises OntologyError on violation."""
        if self.n_entities(EntityKind.USER) != 1:
            raise OntologyError("graph must contain exactly one user entity")
        if self.n_entities(EntityKind.MEMORY) != 2:
            raise OntologyError("graph must contain exactly the two memory entities")
        for value in self.entities(EntityKind.VALUE):
            if len(self.neighbors(value, RelationKind.IS_A, "out")) != 1:
                raise OntologyError(f"value {self.name_of(value)} needs exactly one is_a")
        for item in self.entities(EntityKind.ITEM):
            if not self.neighbors(item, RelationKind.HAS_ASPECT, "out"):
                raise OntologyError(f"item {self.name_of(item)} has no has_aspect edge")
        if len(self._triple_set) != len(self.triples):
            raise OntologyError("duplicate triples in log")


def build_initial(scenario) -> MemoryGraph:
    """Construct the pre-dialog graph from a scenario.

    Layout: the user with its two memory entities, one item entity per
    candidate or history item, ``visited`` edges for history, ``has_aspect``
    for every item's values and ``is_a`` for every value's slot. No sentiment
    triples exist yet.
    """
    g = MemoryGraph()
    g.user = g.add_entity(EntityKind.USER, scenario.user_id)
    g.m_history = g.add_entity(EntityKind.MEMORY, "m_history")
    g.m_cur_dialog = g.add_entity(EntityKind.MEMORY, "m_cur_dialog")
    g.add_triple(g.user, RelationKind.HAS_MEMORY, g.m_history)
    g.add_triple(g.user, RelationKind.HAS_MEMORY, g.m_cur_dialog)

    for item_id in list(scenario.candidates) + list(scenario.history):
        g.add_entity(EntityKind.ITEM, item_id)
    for item_id in scenario.history:
        g.add_triple(
            g.m_history, RelationKind.VISITED, g.lookup(EntityKind.ITEM, item_id)
        )
    for item_id in list(dict.fromkeys(list(scenario.candidates) + list(scenario.history))):
        item = g.lookup(EntityKind.ITEM, item_id)
        for value_id in scenario.item_values[item_id]:
            slot_id = scenario.value_slots.get(value_id)
            if slot_id is None:
                raise OntologyError(f"value {value_id!r} has no slot in scenario")
            value = g.add_entity(EntityKind.VALUE, value_id)
            slot = g.add_entity(EntityKind.SLOT, slot_id)
            g.add_triple(item, RelationKind.HAS_ASPECT, value)
            g.add_triple(value, RelationKind.IS_A, slot)
    return g


def apply_observation(graph: MemoryGraph, obs: Observation) -> MemoryGraph:
    """Return a new graph with ``(m_cur_dialog, sentiment, target)`` appended.

    Idempotent on exact duplicates. Targets must be values or items.
    """
    if obs.target.kind not in (EntityKind.VALUE, EntityKind.ITEM):
        raise OntologyError(
            f"sentiment target must be a value or item, got {obs.target.kind.value}"
        )
    if not graph.has_entity(obs.target):
        raise UnknownEntityError(f"unknown entity {obs.target.ref()}")
    new = graph.copy()
    new.add_triple(new.m_cur_dialog, obs.sentiment, obs.target)
    return new


def neighbors(
    graph: MemoryGraph, entity: EntityId, relation: RelationKind, direction: str = "out"
) -> list[EntityId]:
    return graph.neighbors(entity, relation, direction)


def explain_paths(
    graph: MemoryGraph, item: EntityId, max_hops: int = 6
) -> list[ExplanationPath]:
    """All simple user-to-``item`` paths of at most ``max_hops`` edges.

    Triples may be traversed in either direction. Results are sorted
    shortest-first, then lexicographically, so output is deterministic.
    """
    if not graph.has_entity(item):
        raise UnknownEntityError(f"unknown entity {item.ref()}")
    if item.kind is not EntityKind.ITEM:
        raise OntologyError(f"explanations target items, got {item.kind.value}")
    if max_hops < 2:
        raise ValueError("max_hops must be >= 2")

    adjacency: dict[EntityId, list[tuple[EntityId, PathStep]]] = {}
    for t in graph.triples:
        adjacency.setdefault(t.head, []).append((t.tail, PathStep(t.relation, True)))
        adjacency.setdefault(t.tail, []).append((t.head, PathStep(t.relation, False)))

    found: list[ExplanationPath] = []
    start = graph.user

    def dfs(node: EntityId, entities: list[EntityId], steps: list[PathStep]) -> None:
        if node == item and steps:
            found.append(ExplanationPath(tuple(entities), tuple(steps)))
            return  # simple paths cannot usefully pass through the target item
        if len(steps) == max_hops:
            return
        for nxt, step in adjacency.get(node, []):
            if nxt in entities:
                continue
            entities.append(nxt)
            steps.append(step)
            dfs(nxt, entities, steps)
            entities.pop()
            steps.pop()

    dfs(start, [start], [])
    return sorted(found, key=ExplanationPath.sort_key)


def policy_masks(
    graph: MemoryGraph, scenario
) -> tuple[frozenset[EntityId], frozenset[EntityId], frozenset[EntityId]]:
    """Valid (items, slots, values) for policy output.

    Items are the candidate set only; history-only items are not
    recommendable. Slots and values are everything present in the graph.
    """
    items = frozenset(
        graph.lookup(EntityKind.ITEM, item_id) for item_id in scenario.candidates
    )
    values = frozenset(graph.entities(EntityKind.VALUE))
    slots = frozenset(
        slot
        for slot in graph.entities(EntityKind.SLOT)
        if graph.neighbors(slot, RelationKind.IS_A, "in")
    )
    return items, slots, values
