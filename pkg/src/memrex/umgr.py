"""The user memory graph reasoner: typed graph convolution over the memory
graph plus an act-history encoder, trained to imitate a teacher policy.

Zero-shot by construction: the only embeddings are per entity *kind* and per
act token, so a trained model applies unchanged to scenarios whose users and
items never appeared in training.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import neural
from .agents import AgentObservation, AgentScenarioView
from .catalog import Scenario
from .dialog import (
    AGENT_ACTS,
    AgentAct,
    DegeneratePolicyError,
    Dialog,
    DialogAction,
    Policy,
    PolicyLabels,
    Role,
    UserAct,
    policy_to_action,
)
from .memgraph import EntityId, EntityKind, MemoryGraph, apply_observation, policy_masks
from .neural import ParamStore, Tensor
from .simulator import replay_graph


class LabelError(ValueError):
    """A supervision label falls outside the policy mask."""


HISTORY_MODES = ("full", "prev_user_only", "none")

# Act token vocabulary: INIT plus every (role, act) pair.
INIT_TOKEN = 0
_USER_TOKENS = {act: 1 + i for i, act in enumerate(UserAct)}
_AGENT_TOKENS = {act: 1 + len(UserAct) + i for i, act in enumerate(AgentAct)}
N_ACT_TOKENS = 1 + len(UserAct) + len(AgentAct)

_ACT_INDEX = {act: i for i, act in enumerate(AGENT_ACTS)}


def act_token(role: Role, act) -> int:
    return _USER_TOKENS[act] if role is Role.USER else _AGENT_TOKENS[act]


@dataclass(frozen=True)
class UMGRConfig:
    n_layers: int = 5
    hidden: int = 384
    max_acts: int = 10
    loss_weights: tuple[float, float, float, float] = (1.0, 10.0, 10.0, 100.0)
    batch_size: int = 160
    epochs: int = 5
    seed: int = 0
    lr: float = 1e-3
    grad_clip: float = 5.0
    history_mode: str = "full"  # full | prev_user_only | none
    static_graph: bool = False
    argfree_negatives: bool = True  # argument-free turns still push scores down
    record_rejections: bool = True

    def __post_init__(self) -> None:
        if self.n_layers < 1 or self.hidden < 4:
            raise ValueError("need n_layers >= 1 and hidden >= 4")
        if any(w <= 0 for w in self.loss_weights):
            raise ValueError("loss weights must be positive")
        if self.history_mode not in HISTORY_MODES:
            raise ValueError(f"history_mode must be one of {HISTORY_MODES}")

    @staticmethod
    def desk(**overrides) -> "UMGRConfig":
        base = UMGRConfig(n_layers=2, hidden=64, batch_size=32)
        return replace(base, **overrides)

    @staticmethod
    def paper(**overrides) -> "UMGRConfig":
        return replace(UMGRConfig(), **overrides)

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "hidden": self.hidden,
            "max_acts": self.max_acts,
            "loss_weights": list(self.loss_weights),
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "lr": self.lr,
            "grad_clip": self.grad_clip,
            "history_mode": self.history_mode,
            "static_graph": self.static_graph,
            "argfree_negatives": self.argfree_negatives,
            "record_rejections": self.record_rejections,
        }

    @staticmethod
    def from_dict(payload: Mapping) -> "UMGRConfig":
        payload = dict(payload)
        payload["loss_weights"] = tuple(payload["loss_weights"])
        return UMGRConfig(**payload)


def _relation_param(layer: int, relation_key) -> str:
    rel, reverse = relation_key
    suffix = "~rev" if reverse else ""
    return f"rgcn.{layer}.{rel.value}{suffix}"


def build_params(config: UMGRConfig) -> ParamStore:
    """Fresh parameter store; layout depends only on the config."""
    from .memgraph import MESSAGE_RELATIONS

    rng = np.random.default_rng(config.seed)
    h = config.hidden
    store = ParamStore()
    store.add("act_emb", neural.embedding_uniform(rng, N_ACT_TOKENS, h))
    store.add("kind_emb", neural.embedding_uniform(rng, len(EntityKind), h))
    store.add("lstm.W", neural.glorot_uniform(rng, 2 * h, 4 * h))
    store.add("lstm.b", np.zeros(4 * h))
    for layer in range(config.n_layers):
        for key in MESSAGE_RELATIONS:
            store.add(_relation_param(layer, key), neural.glorot_uniform(rng, h, h))
        store.add(f"ln.{layer}.gain", np.ones(h))
        store.add(f"ln.{layer}.bias", np.zeros(h))
    store.add("agg.W", neural.glorot_uniform(rng, h, h))
    store.add("agg.b", np.zeros(h))
    store.add("merge.W", neural.glorot_uniform(rng, 2 * h, h))
    store.add("merge.b", np.zeros(h))
    for head, out in (("act", len(AGENT_ACTS)), ("item", 1), ("slot", 1), ("value", 1)):
        store.add(f"head_{head}.W1", neural.glorot_uniform(rng, h, h))
        store.add(f"head_{head}.b1", np.zeros(h))
        store.add(f"head_{head}.W2", neural.glorot_uniform(rng, h, out))
        store.add(f"head_{head}.b2", np.zeros(out))
    return store


def history_tokens(
    act_history: Sequence[tuple[Role, object]], config: UMGRConfig
) -> list[int]:
    if config.history_mode == "none":
        return [INIT_TOKEN]
    if config.history_mode == "prev_user_only":
        for role, act in reversed(act_history):
            if role is Role.USER:
                return [act_token(role, act)]
        return [INIT_TOKEN]
    tokens = [act_token(role, act) for role, act in act_history]
    tokens = tokens[-config.max_acts :]
    return tokens or [INIT_TOKEN]


def encode_context(
    act_history: Sequence[tuple[Role, object]], store: ParamStore, config: UMGRConfig
) -> Tensor:
    """Embed the recent (role, act) tokens and run the LSTM encoder."""
    tokens = history_tokens(act_history, config)
    rows = neural.gather(store["act_emb"], np.array(tokens, dtype=np.int64))
    return neural.lstm_encode(rows, store["lstm.W"], store["lstm.b"])


_KIND_ROW = {kind: i for i, kind in enumerate(EntityKind)}


@dataclass
class GraphFeatures:
    """Graph structure flattened to arrays, reusable across forward passes."""

    n_entities: int
    kind_idx: np.ndarray
    edges: list[tuple[tuple, np.ndarray, np.ndarray, Tensor]]
    item_entities: list[EntityId]
    item_idx: np.ndarray
    slot_entities: list[EntityId]
    slot_idx: np.ndarray
    value_entities: list[EntityId]
    value_idx: np.ndarray
    agg_idx: np.ndarray


def mask_indices(graph: MemoryGraph, mask) -> tuple[list[EntityId], np.ndarray]:
    """Masked entities in (kind, index) order plus their dense row indices."""
    ordered = sorted(mask)
    return ordered, np.array([graph.global_index(e) for e in ordered], dtype=np.int64)


def encode_graph(graph: MemoryGraph, masks) -> GraphFeatures:
    n = graph.n_entities()
    kind_idx = np.array([_KIND_ROW[e.kind] for e in graph.entities()], dtype=np.int64)
    edges = []
    for key, (srcs, dsts) in graph.message_edges().items():
        if not srcs:
            continue
        src = np.asarray(srcs, dtype=np.int64)
        dst = np.asarray(dsts, dtype=np.int64)
        coef = 1.0 / np.bincount(dst, minlength=n)[dst]
        edges.append((key, src, dst, Tensor(coef[:, None])))
    items, slots, values = masks
    item_entities, item_idx = mask_indices(graph, items)
    slot_entities, slot_idx = mask_indices(graph, slots)
    value_entities, value_idx = mask_indices(graph, values)
    _, agg_idx = mask_indices(graph, set(items) | set(slots) | set(values))
    return GraphFeatures(
        n_entities=n,
        kind_idx=kind_idx,
        edges=edges,
        item_entities=item_entities,
        item_idx=item_idx,
        slot_entities=slot_entities,
        slot_idx=slot_idx,
        value_entities=value_entities,
        value_idx=value_idx,
        agg_idx=agg_idx,
    )


def rgcn_forward(
    graph: MemoryGraph,
    store: ParamStore,
    config: UMGRConfig,
    features: GraphFeatures | None = None,
) -> Tensor:
    """Entity states after ``n_layers`` of relation-typed convolution.

    Messages flow along each stored triple and its reversed twin; each
    neighborhood is mean-normalized per relation, summed over relations,
    passed through GELU, and merged through a residual + layer norm.
    """
    if features is None:
        features = encode_graph(graph, policy_masks_of(graph))
    n = features.n_entities
    h = neural.gather(store["kind_emb"], features.kind_idx)
    for layer in range(config.n_layers):
        acc = None
        for key, src, dst, coef in features.edges:
            msg = neural.matmul(neural.gather(h, src), store[_relation_param(layer, key)])
            contrib = neural.scatter_add(neural.mul(msg, coef), dst, n)
            acc = contrib if acc is None else neural.add(acc, contrib)
        if acc is None:
            acc = Tensor(np.zeros((n, config.hidden)))
        messages = neural.gelu(acc)
        h = neural.layer_norm(
            neural.add(h, messages),
            store[f"ln.{layer}.gain"],
            store[f"ln.{layer}.bias"],
        )
    return h


def policy_masks_of(graph: MemoryGraph):
    """Fallback masks when no scenario is at hand: everything in the graph."""
    return (
        frozenset(graph.entities(EntityKind.ITEM)),
        frozenset(graph.entities(EntityKind.SLOT)),
        frozenset(graph.entities(EntityKind.VALUE)),
    )


def aggregate_graph(
    states: Tensor, graph: MemoryGraph, masks, store: ParamStore,
    features: GraphFeatures | None = None,
) -> Tensor:
    """Mean of the affine-transformed states over candidates, slots and values."""
    if features is None:
        items, slots, values = masks
        _, idx = mask_indices(graph, set(items) | set(slots) | set(values))
    else:
        idx = features.agg_idx
    transformed = neural.add(neural.matmul(states, store["agg.W"]), store["agg.b"])
    return neural.mean_rows(transformed, idx)


def _head(states: Tensor, idx: np.ndarray, store: ParamStore, head: str) -> Tensor:
    sub = neural.gather(states, idx)
    hid = neural.gelu(neural.add(neural.matmul(sub, store[f"head_{head}.W1"]),
                                 store[f"head_{head}.b1"]))
    out = neural.add(neural.matmul(hid, store[f"head_{head}.W2"]),
                     store[f"head_{head}.b2"])
    return neural.reshape(out, (idx.shape[0],))


@dataclass
class ForwardResult:
    act_logits: Tensor
    item_entities: list[EntityId]
    item_logits: Tensor
    slot_entities: list[EntityId]
    slot_logits: Tensor
    value_entities: list[EntityId]
    value_logits: Tensor

    def to_policy(self) -> Policy:
        probs = neural.softmax(self.act_logits).data
        act_probs = {act: float(probs[i]) for i, act in enumerate(AGENT_ACTS)}

        def scores(entities, logits):
            sig = 1.0 / (1.0 + np.exp(-logits.data))
            return {e: float(s) for e, s in zip(entities, sig)}

        return Policy(
            act_probs=act_probs,
            item_scores=scores(self.item_entities, self.item_logits),
            slot_scores=scores(self.slot_entities, self.slot_logits),
            value_scores=scores(self.value_entities, self.value_logits),
        )


def forward_pass(
    act_history: Sequence[tuple[Role, object]],
    graph: MemoryGraph,
    masks,
    store: ParamStore,
    config: UMGRConfig,
    features: GraphFeatures | None = None,
) -> ForwardResult:
    if features is None:
        features = encode_graph(graph, masks)
    if not features.item_entities:
        raise DegeneratePolicyError("empty candidate mask")
    h_a = encode_context(act_history, store, config)
    states = rgcn_forward(graph, store, config, features)
    h_ag = aggregate_graph(states, graph, masks, store, features)
    merged = neural.add(
        neural.matmul(neural.concat([h_a, h_ag]), store["merge.W"]), store["merge.b"]
    )
    act_hidden = neural.gelu(
        neural.add(neural.matmul(merged, store["head_act.W1"]), store["head_act.b1"])
    )
    act_logits = neural.add(
        neural.matmul(act_hidden, store["head_act.W2"]), store["head_act.b2"]
    )
    return ForwardResult(
        act_logits=act_logits,
        item_entities=features.item_entities,
        item_logits=_head(states, features.item_idx, store, "item"),
        slot_entities=features.slot_entities,
        slot_logits=_head(states, features.slot_idx, store, "slot"),
        value_entities=features.value_entities,
        value_logits=_head(states, features.value_idx, store, "value"),
    )


def predict_policy(
    act_history: Sequence[tuple[Role, object]],
    graph: MemoryGraph,
    masks,
    store: ParamStore,
    config: UMGRConfig,
) -> Policy:
    return forward_pass(act_history, graph, masks, store, config).to_policy()


# -- supervision --------------------------------------------------------------

@dataclass(frozen=True)
class TrainingExample:
    scenario_id: str
    act_history: tuple[tuple[Role, object], ...]
    graph: MemoryGraph
    masks: tuple
    labels: PolicyLabels
    tried_items: frozenset[str] = frozenset()
    features: GraphFeatures | None = None

    def observation(self) -> AgentObservation:
        items, slots, values = self.masks
        g = self.graph
        return AgentObservation(
            act_history=list(self.act_history),
            graph=g,
            items=[g.name_of(e) for e in sorted(items)],
            slots=[g.name_of(e) for e in sorted(slots)],
            values=[g.name_of(e) for e in sorted(values)],
            tried_items=set(self.tried_items),
        )


def derive_labels(
    dialog: Dialog,
    scenario: Scenario,
    agent_turn_index: int,
    config: UMGRConfig | None = None,
) -> TrainingExample:
    """Teacher-forced supervision for one agent turn.

    The graph is rebuilt by replaying every prior user annotation (gold past
    turns); the labels are the agent turn's own act and arguments.
    """
    config = config or UMGRConfig()
    if agent_turn_index >= len(dialog.turns) or agent_turn_index < 0:
        raise IndexError(f"turn {agent_turn_index} out of range")
    turn = dialog.turns[agent_turn_index]
    if turn.action.role is not Role.AGENT:
        raise IndexError(f"turn {agent_turn_index} is not an agent turn")
    if config.static_graph:
        from .memgraph import build_initial

        graph = build_initial(scenario)
    else:
        graph = replay_graph(
            scenario, dialog, agent_turn_index,
            record_rejections=config.record_rejections,
        )
    history = tuple(
        (t.action.role, t.action.act) for t in dialog.turns[:agent_turn_index]
    )[-config.max_acts :]
    tried = frozenset(
        t.action.item_id
        for t in dialog.turns[:agent_turn_index]
        if t.action.role is Role.AGENT and t.action.act is AgentAct.RECOMMENDATION
    )
    action = turn.action
    labels = PolicyLabels(
        act=action.act,
        item_id=action.item_id,
        slot_id=action.slot_id,
        value_id=action.value_id,
    )
    masks = policy_masks(graph, scenario)
    return TrainingExample(
        scenario_id=dialog.scenario_id,
        act_history=history,
        graph=graph,
        masks=masks,
        labels=labels,
        tried_items=tried,
        features=encode_graph(graph, masks),
    )


def _binary_targets(
    entities: list[EntityId], graph: MemoryGraph, labeled: str | None, what: str
) -> np.ndarray | None:
    """0/1 target vector; None when the turn carries no argument of this type."""
    if labeled is None:
        return None
    targets = np.zeros(len(entities))
    names = [graph.name_of(e) for e in entities]
    try:
        targets[names.index(labeled)] = 1.0
    except ValueError:
        raise LabelError(f"label {what} {labeled!r} is outside the mask") from None
    return targets


def compute_loss(
    forward: ForwardResult,
    labels: PolicyLabels,
    graph: MemoryGraph,
    config: UMGRConfig,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted multi-task loss: act cross-entropy + per-type ranking log loss."""
    alpha, beta, gamma, delta = config.loss_weights
    act_loss = neural.softmax_cross_entropy(forward.act_logits, _ACT_INDEX[labels.act])
    total = neural.scale(act_loss, alpha)
    breakdown = {"act": float(act_loss.data)}
    for weight, name, entities, logits, labeled in (
        (beta, "item", forward.item_entities, forward.item_logits, labels.item_id),
        (gamma, "slot", forward.slot_entities, forward.slot_logits, labels.slot_id),
        (delta, "value", forward.value_entities, forward.value_logits, labels.value_id),
    ):
        if not entities:
            breakdown[name] = 0.0
            continue
        targets = _binary_targets(entities, graph, labeled, name)
        if targets is None:
            if not config.argfree_negatives:
                breakdown[name] = 0.0
                continue
            targets = np.zeros(len(entities))
        term = neural.binary_cross_entropy_with_logits(logits, targets)
        breakdown[name] = float(term.data)
        total = neural.add(total, neural.scale(term, weight))
    breakdown["total"] = float(total.data)
    return total, breakdown


def corpus_examples(
    corpus: Sequence[Dialog],
    scenarios: Mapping[str, Scenario],
    config: UMGRConfig,
) -> list[TrainingExample]:
    """Examples for every agent turn, replaying each dialog incrementally.

    Produces exactly what ``derive_labels`` would per turn, but shares the
    replay work across a dialog's turns.
    """
    from .memgraph import Observation, RelationKind, build_initial
    from .simulator import observation_from_user_turn

    examples: list[TrainingExample] = []
    for dialog in corpus:
        scenario = scenarios[dialog.scenario_id]
        graph = build_initial(scenario)
        masks = policy_masks(graph, scenario)
        static_pack = None
        if config.static_graph:
            static_pack = (graph, encode_graph(graph, masks))
        tried: set[str] = set()
        history: list[tuple[Role, object]] = []
        prev_action = None
        for turn in dialog.turns:
            action = turn.action
            if action.role is Role.AGENT:
                if static_pack is not None:
                    g, feats = static_pack
                else:
                    g, feats = graph, encode_graph(graph, masks)
                examples.append(
                    TrainingExample(
                        scenario_id=dialog.scenario_id,
                        act_history=tuple(history[-config.max_acts :]),
                        graph=g,
                        masks=masks,
                        labels=PolicyLabels(
                            act=action.act,
                            item_id=action.item_id,
                            slot_id=action.slot_id,
                            value_id=action.value_id,
                        ),
                        tried_items=frozenset(tried),
                        features=feats,
                    )
                )
                if action.act is AgentAct.RECOMMENDATION:
                    tried.add(action.item_id)
            else:
                obs = observation_from_user_turn(graph, action)
                if obs is not None:
                    graph = apply_observation(graph, obs)
                if (
                    config.record_rejections
                    and prev_action is not None
                    and prev_action.act is AgentAct.RECOMMENDATION
                    and not (
                        action.act is UserAct.REPLY
                        and action.sentiment is not None
                        and action.sentiment.value == "pos_on"
                    )
                ):
                    graph = apply_observation(
                        graph,
                        Observation(
                            RelationKind.NEG_ON,
                            graph.lookup(EntityKind.ITEM, prev_action.item_id),
                        ),
                    )
            history.append((action.role, action.act))
            prev_action = action
    return examples


def train_umgr(
    corpus: Sequence[Dialog],
    scenarios: Mapping[str, Scenario],
    config: UMGRConfig,
    log=None,
) -> tuple[ParamStore, list[float]]:
    """Imitation training on every agent turn of the corpus.

    Returns the trained store and the per-epoch mean loss trace.
    """
    examples = corpus_examples(corpus, scenarios, config)
    if not examples:
        raise ValueError("corpus contains no agent turns to learn from")
    store = build_params(config)
    adam = neural.AdamConfig(lr=config.lr)
    order = list(range(len(examples)))
    trace: list[float] = []
    for epoch in range(config.epochs):
        random.Random(f"{config.seed}:{epoch}").shuffle(order)
        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[start : start + config.batch_size]]
            store.zero_grad()
            batch_loss = None
            for ex in batch:
                fwd = forward_pass(
                    ex.act_history, ex.graph, ex.masks, store, config, ex.features
                )
                loss, _ = compute_loss(fwd, ex.labels, ex.graph, config)
                epoch_losses.append(float(loss.data))
                batch_loss = loss if batch_loss is None else neural.add(batch_loss, loss)
            batch_loss = neural.scale(batch_loss, 1.0 / len(batch))
            neural.backward(batch_loss)
            grads = store.gradients()
            neural.clip_global_norm(grads, config.grad_clip)
            neural.adam_step(store, grads, adam)
        trace.append(float(np.mean(epoch_losses)))
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs}: mean loss {trace[-1]:.4f}")
    return store, trace


# -- the trained agent ---------------------------------------------------------

class UMGRAgent:
    """Greedy decoding of the reasoner's policy, one action per turn."""

    name = "umgr"

    def __init__(self, store: ParamStore, config: UMGRConfig):
        self.store = store
        self.config = config
        self._frozen_graph: MemoryGraph | None = None
        self._frozen_masks = None
        self._view: AgentScenarioView | None = None

    def reset(self, view: AgentScenarioView) -> None:
        self._view = view
        if self.config.static_graph:
            from .memgraph import build_initial

            self._frozen_graph = build_initial(view)
            self._frozen_masks = policy_masks(self._frozen_graph, view)
        else:
            self._frozen_graph = None
            self._frozen_masks = None

    def _graph_and_masks(self, obs: AgentObservation):
        if self.config.static_graph:
            return self._frozen_graph, self._frozen_masks
        graph = obs.graph
        items = frozenset(graph.lookup(EntityKind.ITEM, i) for i in obs.items)
        slots = frozenset(graph.lookup(EntityKind.SLOT, s) for s in obs.slots)
        values = frozenset(graph.lookup(EntityKind.VALUE, v) for v in obs.values)
        return graph, (items, slots, values)

    def policy(self, obs: AgentObservation) -> tuple[Policy, MemoryGraph]:
        graph, masks = self._graph_and_masks(obs)
        pol = predict_policy(obs.recent_acts(), graph, masks, self.store, self.config)
        return pol, graph

    def item_salience(self, obs: AgentObservation) -> dict[str, float]:
        pol, graph = self.policy(obs)
        return {graph.name_of(e): s for e, s in pol.item_scores.items()}

    def act(self, obs: AgentObservation, rng: random.Random) -> DialogAction:
        pol, graph = self.policy(obs)
        return policy_to_action(pol, graph)


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(store: ParamStore, config: UMGRConfig, path: str | Path) -> None:
    path = Path(path)
    store.save(path)
    sidecar = path.with_suffix(path.suffix + ".config.json")
    sidecar.write_text(json.dumps(config.to_dict(), indent=2), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[ParamStore, UMGRConfig]:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".config.json")
    config = UMGRConfig.from_dict(json.loads(sidecar.read_text(encoding="utf-8")))
    store = ParamStore.load(path)
    return store, config
