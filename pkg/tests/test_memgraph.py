from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memrex import memgraph
from memrex.memgraph import (
    EntityId,
    EntityKind,
    Observation,
    OntologyError,
    RelationKind,
    UnknownEntityError,
    apply_observation,
    build_initial,
    explain_paths,
    policy_masks,
)

from conftest import make_scenario


def names(graph, entities):
    return [graph.name_of(e) for e in entities]


def triple_names(graph):
    return [
        (graph.name_of(t.head), t.relation.value, graph.name_of(t.tail))
        for t in graph.triples
    ]


class TestBuildInitial:
    def test_bob_construction(self, bob_scenario):
        g = build_initial(bob_scenario)
        expected = {
            ("Bob", "has_memory", "m_history"),
            ("Bob", "has_memory", "m_cur_dialog"),
            ("m_history", "visited", "Seas"),
            ("Seas", "has_aspect", "affordable"),
            ("Basil", "has_aspect", "thai"),
            ("Basil", "has_aspect", "affordable"),
            ("thai", "is_a", "category"),
            ("affordable", "is_a", "price"),
        }
        assert set(triple_names(g)) == expected
        assert not any(t.relation in memgraph.SENTIMENT_RELATIONS for t in g.triples)
        g.validate()

    def test_empty_history(self, bob_scenario):
        scenario = make_scenario(
            candidates={"Basil": ("thai", "affordable")},
            history={},
            value_slots={"thai": "category", "affordable": "price"},
        )
        g = build_initial(scenario)
        assert g.neighbors(g.m_history, RelationKind.VISITED, "out") == []
        assert g.n_entities(EntityKind.MEMORY) == 2
        g.validate()

    def test_triple_count_two_candidates(self):
        # 2 candidates x 2 values, 1 history item x 1 value, 5 distinct values:
        # 2 has_memory + 1 visited + 5 has_aspect + 5 is_a = 13
        scenario = make_scenario(
            candidates={"c1": ("v1", "v2"), "c2": ("v3", "v4")},
            history={"h1": ("v5",)},
            value_slots={
                "v1": "category",
                "v2": "price",
                "v3": "category",
                "v4": "noise",
                "v5": "price",
            },
        )
        g = build_initial(scenario)
        assert len(g.triples) == 13

    def test_value_without_slot_is_ontology_error(self):
        scenario = make_scenario(
            candidates={"c1": ("v1",)},
            history={},
            value_slots={"v1": "category"},
        )
        scenario.item_values["c1"] = ("v1", "orphan")
        with pytest.raises(OntologyError):
            build_initial(scenario)


class TestApplyObservation:
    def test_pos_on_value(self, bob_scenario):
        g = build_initial(bob_scenario)
        thai = g.lookup(EntityKind.VALUE, "thai")
        g2 = apply_observation(g, Observation(RelationKind.POS_ON, thai))
        assert triple_names(g2)[-1] == ("m_cur_dialog", "pos_on", "thai")
        # prior triples untouched, original graph untouched
        assert triple_names(g2)[:-1] == triple_names(g)

    def test_idempotent(self, bob_scenario):
        g = build_initial(bob_scenario)
        obs = Observation(RelationKind.POS_ON, g.lookup(EntityKind.VALUE, "thai"))
        once = apply_observation(g, obs)
        twice = apply_observation(once, obs)
        assert once.to_json() == twice.to_json()

    def test_item_target_is_legal(self, bob_scenario):
        g = build_initial(bob_scenario)
        basil = g.lookup(EntityKind.ITEM, "Basil")
        g2 = apply_observation(g, Observation(RelationKind.NEG_ON, basil))
        assert ("m_cur_dialog", "neg_on", "Basil") in triple_names(g2)

    def test_slot_target_rejected(self, bob_scenario):
        g = build_initial(bob_scenario)
        slot = g.lookup(EntityKind.SLOT, "price")
        with pytest.raises(OntologyError):
            apply_observation(g, Observation(RelationKind.POS_ON, slot))

    def test_unknown_target_rejected(self, bob_scenario):
        g = build_initial(bob_scenario)
        with pytest.raises(UnknownEntityError):
            apply_observation(
                g, Observation(RelationKind.POS_ON, EntityId(EntityKind.VALUE, 99))
            )

    def test_contradictory_sentiments_coexist(self, bob_scenario):
        g = build_initial(bob_scenario)
        thai = g.lookup(EntityKind.VALUE, "thai")
        g = apply_observation(g, Observation(RelationKind.POS_ON, thai))
        g = apply_observation(g, Observation(RelationKind.NEG_ON, thai))
        tn = triple_names(g)
        assert ("m_cur_dialog", "pos_on", "thai") in tn
        assert ("m_cur_dialog", "neg_on", "thai") in tn


class TestNeighbors:
    def test_out_neighbors_of_item(self, bob_scenario):
        g = build_initial(bob_scenario)
        basil = g.lookup(EntityKind.ITEM, "Basil")
        got = names(g, g.neighbors(basil, RelationKind.HAS_ASPECT, "out"))
        assert got == ["thai", "affordable"]  # (kind, index) order

    def test_no_updates_yet(self, bob_scenario):
        g = build_initial(bob_scenario)
        assert g.neighbors(g.m_cur_dialog, RelationKind.POS_ON, "out") == []

    def test_in_neighbors_of_value(self, bob_scenario):
        g = build_initial(bob_scenario)
        affordable = g.lookup(EntityKind.VALUE, "affordable")
        got = names(g, g.neighbors(affordable, RelationKind.HAS_ASPECT, "in"))
        # candidates register before history items, so Basil has index 0
        assert got == ["Basil", "Seas"]

    def test_unknown_entity(self, bob_scenario):
        g = build_initial(bob_scenario)
        with pytest.raises(UnknownEntityError):
            g.neighbors(EntityId(EntityKind.ITEM, 40), RelationKind.HAS_ASPECT)


class TestExplainPaths:
    def _updated(self, bob_scenario):
        g = build_initial(bob_scenario)
        for vid in ("thai", "affordable"):
            g = apply_observation(
                g, Observation(RelationKind.POS_ON, g.lookup(EntityKind.VALUE, vid))
            )
        return g

    def test_current_dialog_path(self, bob_scenario):
        g = self._updated(bob_scenario)
        basil = g.lookup(EntityKind.ITEM, "Basil")
        rendered = [p.render(g) for p in explain_paths(g, basil, max_hops=4)]
        assert [
            "Bob", "has_memory", "m_cur_dialog", "pos_on", "thai",
            "has_aspect^-1", "Basil",
        ] in rendered

    def test_history_path_within_six_hops(self, bob_scenario):
        g = self._updated(bob_scenario)
        basil = g.lookup(EntityKind.ITEM, "Basil")
        rendered = [p.render(g) for p in explain_paths(g, basil, max_hops=6)]
        assert [
            "Bob", "has_memory", "m_history", "visited", "Seas",
            "has_aspect", "affordable", "has_aspect^-1", "Basil",
        ] in rendered

    def test_unreachable_item(self):
        scenario = make_scenario(
            candidates={"c1": ("v1",), "loner": ("weird",)},
            history={},
            value_slots={"v1": "category", "weird": "exotic"},
        )
        g = build_initial(scenario)
        loner = g.lookup(EntityKind.ITEM, "loner")
        assert explain_paths(g, loner, max_hops=6) == []

    def test_sorted_shortest_first_and_deterministic(self, bob_scenario):
        g = self._updated(bob_scenario)
        basil = g.lookup(EntityKind.ITEM, "Basil")
        paths = explain_paths(g, basil, max_hops=6)
        hops = [p.hops for p in paths]
        assert hops == sorted(hops)
        again = explain_paths(g, basil, max_hops=6)
        assert [p.render(g) for p in paths] == [p.render(g) for p in again]
        for p in paths:
            assert p.entities[0] == g.user
            assert p.entities[-1] == basil
            for (a, b), step in zip(zip(p.entities, p.entities[1:]), p.steps):
                head, tail = (a, b) if step.forward else (b, a)
                assert g.has_triple(head, step.relation, tail)

    def test_rejects_non_item(self, bob_scenario):
        g = build_initial(bob_scenario)
        with pytest.raises(OntologyError):
            explain_paths(g, g.user, max_hops=4)


class TestPolicyMasks:
    def test_history_only_item_excluded(self, bob_scenario):
        g = build_initial(bob_scenario)
        items, slots, values = policy_masks(g, bob_scenario)
        assert names(g, sorted(items)) == ["Basil"]
        assert set(names(g, values)) == {"thai", "affordable"}
        assert set(names(g, slots)) == {"category", "price"}

    def test_masks_exist_in_graph(self, bob_scenario):
        g = build_initial(bob_scenario)
        for mask in policy_masks(g, bob_scenario):
            for e in mask:
                assert g.has_entity(e)


class TestSerialization:
    def test_round_trip(self, bob_scenario):
        g = build_initial(bob_scenario)
        g = apply_observation(
            g, Observation(RelationKind.POS_ON, g.lookup(EntityKind.VALUE, "thai"))
        )
        back = memgraph.MemoryGraph.from_dict(g.to_dict())
        assert back.to_json() == g.to_json()
        assert back.m_cur_dialog == g.m_cur_dialog

    def test_triple_order_is_update_log(self, bob_scenario):
        g = build_initial(bob_scenario)
        n_initial = len(g.triples)
        g = apply_observation(
            g, Observation(RelationKind.NEG_ON, g.lookup(EntityKind.ITEM, "Basil"))
        )
        payload = g.to_dict()
        assert payload["triples"][n_initial][1] == "neg_on"


# -- property tests ----------------------------------------------------------

observation_strategy = st.tuples(
    st.sampled_from([RelationKind.POS_ON, RelationKind.NEG_ON, RelationKind.NEU_ON]),
    st.integers(min_value=0, max_value=4),
    st.booleans(),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(observation_strategy, max_size=12))
def test_update_sequences_preserve_invariants(obs_specs):
    scenario = make_scenario(
        candidates={"c1": ("v1", "v2"), "c2": ("v3",)},
        history={"h1": ("v4", "v5")},
        value_slots={f"v{i}": s for i, s in
                     zip(range(1, 6), ["category", "price", "price", "noise", "category"])},
    )
    g = build_initial(scenario)
    baseline = list(g.triples)
    for sentiment, idx, is_item in obs_specs:
        kind = EntityKind.ITEM if is_item else EntityKind.VALUE
        if idx >= g.n_entities(kind):
            continue
        g = apply_observation(g, Observation(sentiment, EntityId(kind, idx)))
        # monotone: prior log is a prefix
        assert g.triples[: len(baseline)] == baseline
        baseline = list(g.triples)
        g.validate()
        for t in g.triples:
            head_kind, tail_kinds = memgraph.SIGNATURES[t.relation]
            assert t.head.kind is head_kind and t.tail.kind in tail_kinds


@settings(max_examples=50, deadline=None)
@given(st.lists(observation_strategy, max_size=8))
def test_identical_sequences_serialize_identically(obs_specs):
    def run():
        scenario = make_scenario(
            candidates={"c1": ("v1",), "c2": ("v2",)},
            history={},
            value_slots={"v1": "category", "v2": "price"},
        )
        g = build_initial(scenario)
        for sentiment, idx, is_item in obs_specs:
            kind = EntityKind.ITEM if is_item else EntityKind.VALUE
            if idx >= g.n_entities(kind):
                continue
            g = apply_observation(g, Observation(sentiment, EntityId(kind, idx)))
        return g.to_json()

    assert run() == run()
