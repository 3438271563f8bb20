"""Offline metrics, online simulation harness, and salience extraction.

Offline metrics assume teacher forcing: the graph behind every prediction is
rebuilt from the gold annotations of the preceding turns. Entity matching is
only scored on turns whose act was predicted correctly, because the argument
type to compare depends on the act.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .agents import Agent, AgentScenarioView
from .catalog import Scenario, ScenarioSet
from .dialog import AGENT_ACTS, AgentAct, Dialog, PolicyLabels
from .simulator import MAX_TURNS, run_episode, episode_rng
from .umgr import UMGRAgent, UMGRConfig, corpus_examples
from .neural import ParamStore

AGENT_ACT_CLASSES: tuple[AgentAct, ...] = tuple(AgentAct)
EMR_KS = (1, 3, 5)


@dataclass(frozen=True)
class TurnPrediction:
    predicted_act: AgentAct
    top_items: tuple[str, ...]
    top_slots: tuple[str, ...]
    top_values: tuple[str, ...]
    gold: PolicyLabels


@dataclass(frozen=True)
class EMRResult:
    rate: float
    defined: bool  # False when no turn qualified; rate is reported as 0
    n_turns: int


@dataclass(frozen=True)
class MetricsReport:
    act_accuracy: float
    act_f1: float
    emr: dict[int, EMRResult]
    imr: float
    imr_final: float
    n_turns: int
    n_dialogs: int

    def to_dict(self) -> dict:
        return {
            "act_accuracy": self.act_accuracy,
            "act_f1": self.act_f1,
            "emr": {
                str(k): {"rate": r.rate, "defined": r.defined, "n_turns": r.n_turns}
                for k, r in sorted(self.emr.items())
            },
            "imr": self.imr,
            "imr_final": self.imr_final,
            "n_turns": self.n_turns,
            "n_dialogs": self.n_dialogs,
        }


def gold_argument(gold: PolicyLabels) -> tuple[str, str] | None:
    """(entity type, entity id) the gold act argues about, if any."""
    if gold.act is AgentAct.RECOMMENDATION:
        return ("item", gold.item_id)
    if gold.act is AgentAct.OPEN_QUESTION:
        return ("slot", gold.slot_id)
    if gold.act is AgentAct.YES_NO_QUESTION:
        return ("value", gold.value_id)
    if gold.act is AgentAct.ANSWER:
        if gold.value_id is not None:
            return ("value", gold.value_id)
        if gold.item_id is not None:
            return ("item", gold.item_id)
    return None


def act_metrics(
    predictions: Sequence[TurnPrediction], average: str = "macro"
) -> tuple[float, float]:
    """Accuracy and F1 over the six agent act classes.

    Macro averages over all six classes; a class absent from both gold and
    predictions contributes zero. ``average="micro"`` pools counts instead.
    """
    if not predictions:
        raise ValueError("need at least one prediction")
    correct = sum(p.predicted_act is p.gold.act for p in predictions)
    accuracy = correct / len(predictions)
    if average == "micro":
        return accuracy, accuracy  # single-label micro F1 equals accuracy
    if average != "macro":
        raise ValueError(f"unknown average {average!r}")
    f1s = []
    for cls in AGENT_ACT_CLASSES:
        tp = sum(p.predicted_act is cls and p.gold.act is cls for p in predictions)
        fp = sum(p.predicted_act is cls and p.gold.act is not cls for p in predictions)
        fn = sum(p.predicted_act is not cls and p.gold.act is cls for p in predictions)
        f1s.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
    return accuracy, sum(f1s) / len(AGENT_ACT_CLASSES)


def emr_at_k(predictions: Sequence[TurnPrediction], k: int) -> EMRResult:
    """Top-k entity hit rate over correctly-acted, argument-bearing turns."""
    if k not in EMR_KS:
        raise ValueError(f"k must be one of {EMR_KS}")
    hits = 0
    total = 0
    for p in predictions:
        arg = gold_argument(p.gold)
        if arg is None or p.predicted_act is not p.gold.act:
            continue
        total += 1
        kind, entity = arg
        ranked = getattr(p, f"top_{kind}s")
        hits += entity in ranked[:k]
    if total == 0:
        return EMRResult(rate=0.0, defined=False, n_turns=0)
    return EMRResult(rate=hits / total, defined=True, n_turns=total)


def imr(
    dialog_predictions: Sequence[tuple[Sequence[TurnPrediction], str]],
    mode: str = "any",
) -> float:
    """Dialog-level rate of the ground-truth item topping the item ranking.

    ``mode="any"`` scores a hit if any agent turn ranks the truth first;
    ``mode="final"`` looks only at the last agent turn.
    """
    if mode not in ("any", "final"):
        raise ValueError(f"unknown mode {mode!r}")
    if not dialog_predictions:
        raise ValueError("need at least one dialog")
    hits = 0
    for turns, truth in dialog_predictions:
        tops = [t.top_items[0] for t in turns if t.top_items]
        if not tops:
            continue
        if mode == "any":
            hits += truth in tops
        else:
            hits += tops[-1] == truth
    return hits / len(dialog_predictions)


def predict_turns(
    store: ParamStore,
    config: UMGRConfig,
    corpus: Sequence[Dialog],
    scenarios: Mapping[str, Scenario],
    top_k: int = max(EMR_KS),
) -> list[tuple[list[TurnPrediction], str]]:
    """Teacher-forced per-turn predictions for every dialog in the corpus."""
    from .umgr import forward_pass

    out: list[tuple[list[TurnPrediction], str]] = []
    for dialog in corpus:
        scenario = scenarios[dialog.scenario_id]
        preds: list[TurnPrediction] = []
        for example in corpus_examples([dialog], scenarios, config):
            graph = example.graph
            policy = forward_pass(
                example.act_history, graph, example.masks, store, config,
                example.features,
            ).to_policy()
            act = min(
                AGENT_ACTS, key=lambda a: (-policy.act_probs.get(a, 0.0), a.value)
            )

            def names(kind: str) -> tuple[str, ...]:
                return tuple(
                    graph.name_of(e) for e in policy.top_k(kind, top_k)
                )

            preds.append(
                TurnPrediction(
                    predicted_act=act,
                    top_items=names("item"),
                    top_slots=names("slot"),
                    top_values=names("value"),
                    gold=example.labels,
                )
            )
        out.append((preds, scenario.ground_truth[0]))
    return out


def offline_report(
    dialog_predictions: Sequence[tuple[Sequence[TurnPrediction], str]],
) -> MetricsReport:
    flat = [p for turns, _ in dialog_predictions for p in turns]
    accuracy, f1 = act_metrics(flat)
    report = MetricsReport(
        act_accuracy=accuracy,
        act_f1=f1,
        emr={k: emr_at_k(flat, k) for k in EMR_KS},
        imr=imr(dialog_predictions, "any"),
        imr_final=imr(dialog_predictions, "final"),
        n_turns=len(flat),
        n_dialogs=len(dialog_predictions),
    )
    rates = [report.emr[k].rate for k in EMR_KS]
    assert rates == sorted(rates), "EMR must be monotone in k"
    return report


@dataclass(frozen=True)
class OnlineReport:
    mean_success: float
    stderr: float
    per_run: tuple[float, ...]
    n_scenarios: int
    mean_turns: float

    def to_dict(self) -> dict:
        return {
            "mean_success": self.mean_success,
            "stderr": self.stderr,
            "per_run": list(self.per_run),
            "n_scenarios": self.n_scenarios,
            "mean_turns": self.mean_turns,
        }


def online_eval(
    make_agent: Callable[[], Agent],
    scenarios: Sequence[Scenario] | ScenarioSet,
    runs: int = 3,
    max_turns: int = MAX_TURNS,
    seed: int | str = 0,
    per_episode_sink: Callable[[int, Scenario, object], None] | None = None,
) -> OnlineReport:
    """Mean success rate of an agent against the simulator, plus run spread.

    ``per_episode_sink`` receives (run index, scenario, EpisodeResult) for
    every simulated episode, e.g. to stream episode logs to disk.
    """
    if isinstance(scenarios, ScenarioSet):
        scenarios = scenarios.scenarios
    per_run: list[float] = []
    turn_counts: list[int] = []
    for run in range(runs):
        wins = 0
        for scenario in scenarios:
            result = run_episode(
                make_agent(),
                scenario,
                max_turns=max_turns,
                rng=episode_rng(seed, scenario.scenario_id, run),
            )
            wins += result.success
            turn_counts.append(result.n_turns)
            if per_episode_sink is not None:
                per_episode_sink(run, scenario, result)
        per_run.append(wins / len(scenarios))
    mean = sum(per_run) / len(per_run)
    if len(per_run) > 1:
        var = sum((r - mean) ** 2 for r in per_run) / (len(per_run) - 1)
        stderr = math.sqrt(var / len(per_run))
    else:
        stderr = 0.0
    return OnlineReport(
        mean_success=mean,
        stderr=stderr,
        per_run=tuple(per_run),
        n_scenarios=len(scenarios),
        mean_turns=sum(turn_counts) / len(turn_counts),
    )


@dataclass(frozen=True)
class SalienceMatrix:
    """Per-decision-point item scores: one row per agent turn, one column per
    candidate."""

    items: tuple[str, ...]
    turn_indices: tuple[int, ...]
    rows: tuple[tuple[float, ...], ...]

    def to_json_dict(self) -> dict:
        return {
            "items": list(self.items),
            "turn_indices": list(self.turn_indices),
            "rows": [list(r) for r in self.rows],
        }

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["turn_index", *self.items])
            for turn_idx, row in zip(self.turn_indices, self.rows):
                writer.writerow([turn_idx, *[f"{v:.6f}" for v in row]])


def salience_matrix(
    agent: UMGRAgent, dialog: Dialog, scenario: Scenario
) -> SalienceMatrix:
    """Replay a dialog and collect the item scores at every agent turn."""
    agent.reset(AgentScenarioView.from_scenario(scenario))
    examples = corpus_examples([dialog], {dialog.scenario_id: scenario}, agent.config)
    rows = []
    turn_indices = dialog.agent_turn_indices()
    for example in examples:
        policy, graph = agent.policy(example.observation())
        scores = {graph.name_of(e): s for e, s in policy.item_scores.items()}
        rows.append(tuple(scores[c] for c in scenario.candidates))
    return SalienceMatrix(
        items=tuple(scenario.candidates),
        turn_indices=tuple(turn_indices),
        rows=tuple(rows),
    )


def write_metrics_json(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )


def write_per_dialog_csv(
    rows: Sequence[Mapping[str, object]], path: str | Path
) -> None:
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    fields = list(rows[0].keys())
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
