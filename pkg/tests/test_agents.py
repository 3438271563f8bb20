from __future__ import annotations

import random
from collections import Counter

import pytest

from memrex.agents import (
    AgentObservation,
    AgentScenarioView,
    OracleAgent,
    RandomAgent,
    RecAgent,
)
from memrex.dialog import AgentAct, Role, UserAct, validate_action
from memrex.memgraph import build_initial, policy_masks
from memrex.simulator import episode_rng, run_episode

from conftest import make_scenario


def make_obs(scenario, graph=None, history=(), tried=()):
    graph = graph or build_initial(scenario)
    items_m, slots_m, values_m = policy_masks(graph, scenario)
    return AgentObservation(
        act_history=list(history),
        graph=graph,
        items=[graph.name_of(e) for e in sorted(items_m)],
        slots=[graph.name_of(e) for e in sorted(slots_m)],
        values=[graph.name_of(e) for e in sorted(values_m)],
        tried_items=set(tried),
    )


@pytest.fixture
def scenario():
    return make_scenario(
        candidates={
            "alpha": ("thai", "cheap"),
            "beta": ("italian", "cheap"),
            "gamma": ("thai", "expensive"),
            "delta": ("italian", "expensive"),
        },
        history={"old1": ("thai", "expensive")},
        value_slots={
            "thai": "category",
            "italian": "category",
            "cheap": "price",
            "expensive": "price",
        },
        truth="alpha",
    )


class TestRandomAgent:
    def test_act_frequencies_uniform(self, scenario):
        obs = make_obs(scenario)
        agent = RandomAgent()
        agent.reset(AgentScenarioView.from_scenario(scenario))
        rng = random.Random(11)
        counts = Counter(agent.act(obs, rng).act for _ in range(6000))
        for act in AgentAct:
            assert abs(counts[act] / 6000 - 1 / 6) < 0.02

    def test_all_actions_shape_valid(self, scenario):
        obs = make_obs(scenario)
        agent = RandomAgent()
        rng = random.Random(3)
        for _ in range(500):
            validate_action(agent.act(obs, rng))

    def test_recommendation_uniform_over_candidates(self, scenario):
        obs = make_obs(scenario)
        agent = RandomAgent()
        rng = random.Random(5)
        items = Counter()
        for _ in range(8000):
            action = agent.act(obs, rng)
            if action.act is AgentAct.RECOMMENDATION:
                items[action.item_id] += 1
        total = sum(items.values())
        for item in obs.items:
            assert abs(items[item] / total - 1 / len(obs.items)) < 0.05

    def test_deterministic_under_seed(self, scenario):
        obs = make_obs(scenario)
        a = [RandomAgent().act(obs, random.Random(9)).act for _ in range(1)]
        b = [RandomAgent().act(obs, random.Random(9)).act for _ in range(1)]
        assert a == b


class TestRecAgent:
    def test_always_recommends_and_never_repeats(self, scenario):
        agent = RecAgent()
        tried = set()
        rng = random.Random(1)
        for _ in range(4):
            action = agent.act(make_obs(scenario, tried=tried), rng)
            assert action.act is AgentAct.RECOMMENDATION
            assert action.item_id not in tried
            tried.add(action.item_id)
        # candidates exhausted: repeats are allowed now
        action = agent.act(make_obs(scenario, tried=tried), rng)
        assert action.item_id in tried

    def test_forced_choice(self, scenario):
        agent = RecAgent()
        tried = {"alpha", "beta", "gamma"}
        action = agent.act(make_obs(scenario, tried=tried), random.Random(2))
        assert action.item_id == "delta"


class TestOracleAgent:
    def _fresh(self, scenario):
        agent = OracleAgent()
        agent.reset(AgentScenarioView.from_scenario(scenario))
        return agent

    def test_greets_first(self, scenario):
        agent = self._fresh(scenario)
        action = agent.act(make_obs(scenario, history=[(Role.USER, UserAct.GREETING)]),
                           random.Random(0))
        assert action.act is AgentAct.GREETING

    def test_question_selection_targets_discriminative_slot(self):
        # two candidates differing only in price: the question scorer ranks
        # price as the only informative slot
        scenario = make_scenario(
            candidates={"a": ("thai", "cheap"), "b": ("thai", "expensive")},
            history={},
            value_slots={"thai": "category", "cheap": "price", "expensive": "price"},
            truth="a",
        )
        agent = self._fresh(scenario)
        exp_price, _ = agent._expected_remaining("price", ["a", "b"])
        exp_cat, _ = agent._expected_remaining("category", ["a", "b"])
        assert exp_price == 1.0
        assert exp_cat == 2.0

    def test_identical_candidates_force_recommendation(self):
        scenario = make_scenario(
            candidates={
                "a": ("thai", "cheap"),
                "b": ("thai", "cheap"),
                "c": ("thai", "cheap"),
            },
            history={},
            value_slots={"thai": "category", "cheap": "price"},
            truth="a",
        )
        agent = self._fresh(scenario)
        history = [(Role.USER, UserAct.GREETING), (Role.AGENT, AgentAct.GREETING),
                   (Role.USER, UserAct.GREETING)]
        action = agent.act(make_obs(scenario, history=history), random.Random(0))
        assert action.act is AgentAct.RECOMMENDATION

    def test_single_consistent_candidate_is_recommended(self, scenario):
        from memrex.memgraph import EntityKind, Observation, RelationKind, apply_observation

        graph = build_initial(scenario)
        graph = apply_observation(
            graph, Observation(RelationKind.POS_ON, graph.lookup(EntityKind.VALUE, "thai"))
        )
        graph = apply_observation(
            graph, Observation(RelationKind.POS_ON, graph.lookup(EntityKind.VALUE, "cheap"))
        )
        agent = self._fresh(scenario)
        history = [(Role.USER, UserAct.GREETING), (Role.AGENT, AgentAct.GREETING),
                   (Role.USER, UserAct.ANSWER)]
        action = agent.act(make_obs(scenario, graph=graph, history=history),
                           random.Random(0))
        assert action.act is AgentAct.RECOMMENDATION
        assert action.item_id == "alpha"

    def test_consistent_set_never_drops_truth_in_episodes(self):
        # observations only accumulate, so end-state membership implies the
        # truth stayed in the consistent set for the whole episode
        from memrex.catalog import CatalogConfig, generate_scenario, synthesize_catalog
        from memrex.memgraph import build_initial as rebuild
        from memrex.simulator import replay_graph

        catalog = synthesize_catalog(CatalogConfig(n_items=400, seed=5))
        wins = 0
        episodes = 1000
        for u in range(episodes):
            scenario = generate_scenario(catalog, f"orc{u % 120}", u % 2 == 0, seed=31 + u)
            agent = OracleAgent()
            result = run_episode(agent, scenario, rng=episode_rng(u, scenario.scenario_id))
            wins += result.success
            final = replay_graph(scenario, result.dialog, len(result.dialog.turns))
            obs = make_obs(scenario, graph=final)
            assert scenario.ground_truth[0] in agent.consistent_candidates(obs)
        assert wins >= 0.8 * episodes  # the teacher should solve most scenarios

    def test_ynq_used_when_history_supports_majority_value(self):
        scenario = make_scenario(
            candidates={
                "a": ("thai", "cheap"),
                "b": ("thai", "expensive"),
                "c": ("italian", "cheap"),
                "d": ("italian", "expensive"),
            },
            history={"past": ("thai", "cheap")},
            value_slots={
                "thai": "category",
                "italian": "category",
                "cheap": "price",
                "expensive": "price",
            },
            truth="a",
        )
        agent = self._fresh(scenario)
        history = [(Role.USER, UserAct.GREETING), (Role.AGENT, AgentAct.GREETING),
                   (Role.USER, UserAct.GREETING)]
        action = agent.act(make_obs(scenario, history=history), random.Random(0))
        assert action.act is AgentAct.YES_NO_QUESTION
        assert action.value_id in {"thai", "cheap"}
