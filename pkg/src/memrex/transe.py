"""Translation-based graph embeddings and the pretrained-embedding agent.

Embeddings are trained once over the triples of every training scenario's
graph and reused as a static encoder at dialog time: no per-scenario
reasoning, which is exactly the weakness this baseline is meant to expose.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .agents import AgentObservation, AgentScenarioView
from .catalog import Scenario
from .dialog import AgentAct, DialogAction, Role
from .memgraph import RelationKind, build_initial

TripleText = tuple[str, str, str]  # (head name, relation name, tail name)


@dataclass(frozen=True)
class TransEConfig:
    dim: int = 32
    margin: float = 1.0
    lr: float = 0.05
    epochs: int = 50
    seed: int = 0


@dataclass
class EmbeddingTable:
    names: dict[str, int]
    entities: np.ndarray  # (n_entities, dim)
    relations: dict[str, np.ndarray]
    margin: float

    def vec(self, name: str) -> np.ndarray | None:
        idx = self.names.get(name)
        return None if idx is None else self.entities[idx]

    def rel(self, relation: RelationKind) -> np.ndarray:
        return self.relations[relation.value]


def scenario_triples(scenarios: Iterable[Scenario]) -> list[TripleText]:
    """Name-keyed triples of every scenario's initial graph, deduplicated."""
    seen: set[TripleText] = set()
    out: list[TripleText] = []
    for scenario in scenarios:
        g = build_initial(scenario)
        for t in g.triples:
            named = (g.name_of(t.head), t.relation.value, g.name_of(t.tail))
            if named not in seen:
                seen.add(named)
                out.append(named)
    return out


def _norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt((x * x).sum(axis=-1) + 1e-12)


def train_transe(
    triples: Sequence[TripleText], config: TransEConfig | None = None
) -> tuple[EmbeddingTable, list[float]]:
    """Margin-ranking training with uniform head-or-tail corruption.

    The corrupted twin of each triple is sampled once (seeded) and kept for
    the whole run; updates are full-batch gradient steps, so the loss trace
    is monotone. Entity vectors are projected back onto the unit ball after
    every epoch.
    """
    if not triples:
        raise ValueError("TransE needs at least one training triple")
    config = config or TransEConfig()
    rng = np.random.default_rng(config.seed)

    names = sorted({t[0] for t in triples} | {t[2] for t in triples})
    name_idx = {n: i for i, n in enumerate(names)}
    rel_names = sorted({t[1] for t in triples} | {r.value for r in RelationKind})
    bound = 6.0 / np.sqrt(config.dim)
    entities = rng.uniform(-bound, bound, size=(len(names), config.dim))
    entities /= _norms(entities)[:, None]
    relations = {r: rng.uniform(-bound, bound, size=config.dim) for r in rel_names}

    heads = np.array([name_idx[t[0]] for t in triples])
    tails = np.array([name_idx[t[2]] for t in triples])
    rel_of = [t[1] for t in triples]
    n = len(triples)

    corrupt_head = rng.random(n) < 0.5
    corrupted = rng.integers(0, len(names), size=n)
    neg_heads = np.where(corrupt_head, corrupted, heads)
    neg_tails = np.where(corrupt_head, tails, corrupted)
    r_mat = np.stack([relations[r] for r in rel_of])

    trace: list[float] = []
    for _ in range(config.epochs):
        r_mat = np.stack([relations[r] for r in rel_of])
        pos_diff = entities[heads] + r_mat - entities[tails]
        neg_diff = entities[neg_heads] + r_mat - entities[neg_tails]
        pos_score = _norms(pos_diff)
        neg_score = _norms(neg_diff)
        viol = config.margin + pos_score - neg_score
        active = viol > 0.0
        trace.append(float(np.maximum(viol, 0.0).mean()))
        if not active.any():
            continue

        g_pos = pos_diff[active] / pos_score[active, None]
        g_neg = neg_diff[active] / neg_score[active, None]
        grad_e = np.zeros_like(entities)
        np.add.at(grad_e, heads[active], g_pos)
        np.add.at(grad_e, tails[active], -g_pos)
        np.add.at(grad_e, neg_heads[active], -g_neg)
        np.add.at(grad_e, neg_tails[active], g_neg)
        grad_r: dict[str, np.ndarray] = {}
        for i in np.flatnonzero(active):
            grad_r.setdefault(rel_of[i], np.zeros(config.dim))
        g_delta = g_pos - g_neg
        for pos, i in enumerate(np.flatnonzero(active)):
            grad_r[rel_of[i]] += g_delta[pos]

        scale = config.lr / max(1, int(active.sum()))
        entities -= scale * grad_e
        for r, g in grad_r.items():
            relations[r] -= scale * g
        norms = _norms(entities)
        over = norms > 1.0
        entities[over] /= norms[over, None]

    return (
        EmbeddingTable(
            names=name_idx, entities=entities, relations=relations, margin=config.margin
        ),
        trace,
    )


def triple_score(table: EmbeddingTable, head: str, relation: RelationKind, tail: str) -> float:
    """-||h + r - t||; higher means more plausible."""
    h, t = table.vec(head), table.vec(tail)
    if h is None or t is None:
        return -float("inf")
    return -float(np.linalg.norm(h + table.rel(relation) - t))


def save_table(table: EmbeddingTable, path) -> None:
    import json
    from pathlib import Path

    payload = {
        "margin": table.margin,
        "names": table.names,
        "entities": table.entities.tolist(),
        "relations": {r: v.tolist() for r, v in table.relations.items()},
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_table(path) -> EmbeddingTable:
    import json
    from pathlib import Path

    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return EmbeddingTable(
        names=payload["names"],
        entities=np.array(payload["entities"], dtype=np.float64),
        relations={r: np.array(v, dtype=np.float64) for r, v in payload["relations"].items()},
        margin=payload["margin"],
    )


class TransEAgent:
    """Fixed schedule: greet, ask the two most diverse slots, then recommend
    down the static embedding ranking."""

    name = "transe"

    def __init__(self, table: EmbeddingTable):
        self.table = table
        self.view: AgentScenarioView | None = None
        self.question_slots: list[str] = []
        self.questions_asked = 0

    def reset(self, view: AgentScenarioView) -> None:
        self.view = view
        self.questions_asked = 0
        diversity: dict[str, int] = {}
        for c in view.candidates:
            for v in view.values_of(c):
                slot = view.value_slots[v]
                diversity.setdefault(slot, 0)
        for slot in diversity:
            distinct = {
                v
                for c in view.candidates
                for v in view.slot_values(c, slot)
            }
            diversity[slot] = len(distinct)
        ranked = sorted(diversity, key=lambda s: (-diversity[s], s))
        self.question_slots = ranked[:2]

    def _item_scores(self, obs: AgentObservation) -> dict[str, float]:
        assert self.view is not None
        pos_values = [
            v
            for v in obs.sentiment_targets(RelationKind.POS_ON)
            if v in self.view.value_slots
        ]
        zero = np.zeros(self.table.entities.shape[1])
        scores: dict[str, float] = {}
        for c in obs.items:
            c_vec = self.table.vec(c)
            c_vec = zero if c_vec is None else c_vec
            if pos_values:
                total = 0.0
                for v in pos_values:
                    v_vec = self.table.vec(v)
                    v_vec = zero if v_vec is None else v_vec
                    total += -float(
                        np.linalg.norm(c_vec + self.table.rel(RelationKind.HAS_ASPECT) - v_vec)
                    )
                scores[c] = total / len(pos_values)
            else:
                u_vec = self.table.vec(self.view.user_id)
                u_vec = zero if u_vec is None else u_vec
                target = (
                    u_vec
                    + self.table.rel(RelationKind.HAS_MEMORY)
                    + self.table.rel(RelationKind.POS_ON)
                )
                scores[c] = -float(np.linalg.norm(target - c_vec))
        return scores

    def item_salience(self, obs: AgentObservation) -> dict[str, float]:
        scores = self._item_scores(obs)
        lo, hi = min(scores.values()), max(scores.values())
        span = (hi - lo) or 1.0
        return {c: (scores[c] - lo) / span for c in obs.items}

    def act(self, obs: AgentObservation, rng: random.Random) -> DialogAction:
        agent_acts = [a for r, a in obs.act_history if r is Role.AGENT]
        if not agent_acts:
            return DialogAction(Role.AGENT, AgentAct.GREETING)
        if self.questions_asked < len(self.question_slots):
            slot = self.question_slots[self.questions_asked]
            self.questions_asked += 1
            return DialogAction(Role.AGENT, AgentAct.OPEN_QUESTION, slot_id=slot)
        scores = self._item_scores(obs)
        untried = [c for c in obs.items if c not in obs.tried_items]
        pool = untried or obs.items
        best = min(pool, key=lambda c: (-scores[c], c))
        return DialogAction(Role.AGENT, AgentAct.RECOMMENDATION, item_id=best)
