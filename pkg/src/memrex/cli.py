"""Command-line entry points.

Artifact paths default to the data root (the MEMREX_DATA_DIR environment
variable, else ./memrex-data). A JSON config file passed with ``--config``
supplies default option values per command.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .catalog import (
    CatalogConfig,
    generate_split,
    read_catalog,
    read_scenarios,
    synthesize_catalog,
    write_catalog,
    write_scenarios,
)
from .dialog import read_corpus, write_corpus
from .evaluation import (
    offline_report,
    online_eval,
    predict_turns,
    salience_matrix,
    write_metrics_json,
    write_per_dialog_csv,
)
from .simulator import simulate_corpus
from .umgr import UMGRAgent, UMGRConfig, load_checkpoint, save_checkpoint, train_umgr


def _data_dir() -> Path:
    return Path(os.environ.get("MEMREX_DATA_DIR", "memrex-data"))


def _load_config(ctx, param, value):
    if value is None:
        return None
    payload = json.loads(Path(value).read_text(encoding="utf-8"))
    ctx.default_map = dict(payload)
    return value


@click.group()
@click.option(
    "--config",
    type=click.Path(exists=True, dir_okay=False),
    callback=_load_config,
    expose_value=False,
    is_eager=True,
    help="JSON file of per-command default options.",
)
def main():
    """Memory-graph conversational recommendation lab."""


def _ensure_parent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


@main.command("gen-catalog")
@click.option("--items", default=500, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def gen_catalog(items: int, seed: int, out: str | None):
    """Synthesize the restaurant catalog."""
    catalog = synthesize_catalog(CatalogConfig(n_items=items, seed=seed))
    out_path = _ensure_parent(Path(out) if out else _data_dir() / "catalog.jsonl")
    write_catalog(catalog, out_path)
    click.echo(
        f"wrote {len(catalog.items)} items / {len(catalog.values)} values -> {out_path}"
    )


@main.command("gen-scenarios")
@click.option("--catalog", "catalog_path", type=click.Path(exists=True), default=None)
@click.option("--train", default=100, show_default=True, help="users per split")
@click.option("--dev", default=10, show_default=True)
@click.option("--test", default=50, show_default=True)
@click.option("--seed", default=11, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
def gen_scenarios(catalog_path, train, dev, test, seed, out_dir):
    """Generate train/dev/test scenario splits with disjoint users."""
    catalog = (
        read_catalog(catalog_path)
        if catalog_path
        else synthesize_catalog(CatalogConfig())
    )
    sets = generate_split(catalog, {"train": train, "dev": dev, "test": test}, seed)
    out = Path(out_dir) if out_dir else _data_dir()
    out.mkdir(parents=True, exist_ok=True)
    for split, sset in sets.items():
        path = out / f"scenarios-{split}.jsonl"
        write_scenarios(sset, path)
        click.echo(f"{split}: {len(sset.scenarios)} scenarios -> {path}")


def _agent_factory(name: str, ckpt: str | None, transe_table: str | None, scenarios):
    from .agents import OracleAgent, RandomAgent, RecAgent
    from .transe import TransEAgent, TransEConfig, load_table, scenario_triples, train_transe

    if name == "random":
        return RandomAgent
    if name == "rec":
        return RecAgent
    if name == "oracle":
        return OracleAgent
    if name == "transe":
        if transe_table:
            table = load_table(transe_table)
        else:
            click.echo("no --transe-table given; fitting embeddings on the fly")
            table, _ = train_transe(scenario_triples(scenarios), TransEConfig())
        return lambda: TransEAgent(table)
    if name == "umgr":
        if not ckpt:
            raise click.UsageError("--ckpt is required for the umgr agent")
        store, config = load_checkpoint(ckpt)
        return lambda: UMGRAgent(store, config)
    raise click.UsageError(f"unknown agent {name!r}")


@main.command("gen-corpus")
@click.option("--scenarios", "scenarios_path", type=click.Path(exists=True), required=True)
@click.option("--agent", default="oracle", show_default=True)
@click.option("--ckpt", type=click.Path(exists=True), default=None)
@click.option("--transe-table", type=click.Path(exists=True), default=None)
@click.option("--seed", default=101, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def gen_corpus(scenarios_path, agent, ckpt, transe_table, seed, out):
    """Self-play a corpus of annotated dialogs over a scenario file."""
    sset = read_scenarios(scenarios_path)
    factory = _agent_factory(agent, ckpt, transe_table, sset.scenarios)
    results = simulate_corpus(factory, sset, seed=seed)
    out_path = _ensure_parent(
        Path(out) if out else _data_dir() / f"corpus-{sset.split}.jsonl"
    )
    write_corpus([r.dialog for r in results], out_path)
    wins = sum(r.success for r in results)
    click.echo(
        f"{len(results)} dialogs ({wins} successful, "
        f"{sum(r.n_turns for r in results) / len(results):.1f} avg turns) -> {out_path}"
    )


@main.command("train")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--scenarios", "scenarios_path", type=click.Path(exists=True), required=True)
@click.option("--profile", type=click.Choice(["desk", "paper"]), default="desk",
              show_default=True)
@click.option("--epochs", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--history-mode", type=click.Choice(["full", "prev_user_only", "none"]),
              default="full", show_default=True)
@click.option("--static-graph", is_flag=True, help="train the frozen-graph ablation")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def train(corpus_path, scenarios_path, profile, epochs, seed, history_mode,
          static_graph, out_path):
    """Train the graph reasoner on a self-play corpus."""
    corpus = read_corpus(corpus_path)
    sset = read_scenarios(scenarios_path)
    scenario_map = {s.scenario_id: s for s in sset.scenarios}
    base = UMGRConfig.desk if profile == "desk" else UMGRConfig.paper
    config = base(
        epochs=epochs, seed=seed, history_mode=history_mode, static_graph=static_graph
    )
    store, trace = train_umgr(corpus, scenario_map, config, log=click.echo)
    out = _ensure_parent(Path(out_path))
    save_checkpoint(store, config, out)
    trace_path = out.with_suffix(".loss.csv")
    trace_path.write_text(
        "epoch,mean_loss\n"
        + "\n".join(f"{i + 1},{v:.6f}" for i, v in enumerate(trace))
        + "\n",
        encoding="utf-8",
    )
    from .report import save_loss_curve

    figure = save_loss_curve(trace, out.with_suffix(".loss.png"))
    click.echo(f"checkpoint -> {out}; loss trace -> {trace_path}; figure -> {figure}")


@main.command("train-transe")
@click.option("--scenarios", "scenarios_path", type=click.Path(exists=True), required=True)
@click.option("--dim", default=32, show_default=True)
@click.option("--epochs", default=100, show_default=True)
@click.option("--lr", default=0.05, show_default=True)
@click.option("--margin", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def train_transe_cmd(scenarios_path, dim, epochs, lr, margin, seed, out_path):
    """Fit translation embeddings over all training-scenario graphs."""
    from .transe import TransEConfig, save_table, scenario_triples, train_transe

    sset = read_scenarios(scenarios_path)
    triples = scenario_triples(sset.scenarios)
    table, trace = train_transe(
        triples, TransEConfig(dim=dim, margin=margin, lr=lr, epochs=epochs, seed=seed)
    )
    out = _ensure_parent(Path(out_path))
    save_table(table, out)
    click.echo(
        f"{len(triples)} triples, loss {trace[0]:.4f} -> {trace[-1]:.4f}; table -> {out}"
    )


@main.command("eval-offline")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--scenarios", "scenarios_path", type=click.Path(exists=True), required=True)
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.option("--salience-dialogs", default=3, show_default=True,
              help="render salience artifacts for the first N dialogs")
def eval_offline(corpus_path, scenarios_path, ckpt, out_dir, salience_dialogs):
    """Teacher-forced offline metrics plus salience artifacts."""
    corpus = read_corpus(corpus_path)
    sset = read_scenarios(scenarios_path)
    scenario_map = {s.scenario_id: s for s in sset.scenarios}
    store, config = load_checkpoint(ckpt)
    predictions = predict_turns(store, config, corpus, scenario_map)
    report = offline_report(predictions)
    out = Path(out_dir) if out_dir else _data_dir() / "offline"
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_json(report, out / "metrics.json")
    rows = [
        {
            "scenario_id": dialog.scenario_id,
            "n_agent_turns": len(turns),
            "imr_hit": int(any(t.top_items and t.top_items[0] == truth for t in turns)),
        }
        for dialog, (turns, truth) in zip(corpus, predictions)
    ]
    write_per_dialog_csv(rows, out / "per_dialog.csv")

    from .report import save_salience_heatmap

    agent = UMGRAgent(store, config)
    for dialog in corpus[:salience_dialogs]:
        matrix = salience_matrix(agent, dialog, scenario_map[dialog.scenario_id])
        stem = out / f"salience-{dialog.scenario_id}"
        matrix.write_csv(stem.with_suffix(".csv"))
        (stem.with_suffix(".json")).write_text(
            json.dumps(matrix.to_json_dict()), encoding="utf-8"
        )
        save_salience_heatmap(matrix, stem.with_suffix(".png"),
                              title=f"salience {dialog.scenario_id}")
    click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    click.echo(f"artifacts -> {out}")


@main.command("eval-online")
@click.option("--scenarios", "scenarios_path", type=click.Path(exists=True), required=True)
@click.option("--agent", "agents", multiple=True, required=True,
              help="repeatable: random | rec | oracle | transe | umgr")
@click.option("--ckpt", type=click.Path(exists=True), default=None)
@click.option("--transe-table", type=click.Path(exists=True), default=None)
@click.option("--runs", default=3, show_default=True)
@click.option("--seed", default=5, show_default=True)
@click.option("--max-turns", default=11, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
def eval_online(scenarios_path, agents, ckpt, transe_table, runs, seed, max_turns, out_dir):
    """Simulated online evaluation; repeat --agent to compare several."""
    sset = read_scenarios(scenarios_path)
    out = Path(out_dir) if out_dir else _data_dir() / "online"
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    rows = []
    with (out / "episodes.jsonl").open("w", encoding="utf-8") as episodes:
        for name in agents:
            factory = _agent_factory(name, ckpt, transe_table, sset.scenarios)

            def sink(run, scenario, result, name=name):
                rows.append(
                    {"agent": name, "run": run, "scenario_id": scenario.scenario_id,
                     "success": int(result.success), "n_turns": result.n_turns}
                )
                episodes.write(json.dumps({
                    "agent": name,
                    "run": run,
                    "success": result.success,
                    "n_turns": result.n_turns,
                    **result.dialog.to_dict(),
                }, sort_keys=True) + "\n")

            report = online_eval(
                factory, sset, runs=runs, max_turns=max_turns, seed=seed,
                per_episode_sink=sink,
            )
            reports[name] = report
            note = " (approximate baseline wiring)" if name == "transe" else ""
            click.echo(
                f"{name}: success {report.mean_success:.4f} +- {report.stderr:.4f} "
                f"({report.n_scenarios} scenarios x {runs} runs){note}"
            )
    (out / "online.json").write_text(
        json.dumps({n: r.to_dict() for n, r in reports.items()}, indent=2,
                   sort_keys=True),
        encoding="utf-8",
    )
    write_per_dialog_csv(rows, out / "per_dialog.csv")
    from .report import save_success_bars

    figure = save_success_bars(reports, out / "success.png")
    click.echo(f"artifacts -> {out} (figure {figure.name})")


def _build_manager(catalog_path, scenarios_paths, ckpt, transe_table):
    from .service import SessionManager

    catalog = read_catalog(catalog_path) if catalog_path else None
    scenario_map = {}
    for path in scenarios_paths or ():
        for s in read_scenarios(path).scenarios:
            scenario_map[s.scenario_id] = s
    return SessionManager(
        catalog=catalog,
        scenarios=scenario_map,
        checkpoint=ckpt,
        transe_table=transe_table,
    )


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--catalog", "catalog_path", type=click.Path(exists=True), default=None)
@click.option("--scenarios", "scenarios_paths", type=click.Path(exists=True),
              multiple=True)
@click.option("--ckpt", type=click.Path(exists=True), default=None)
@click.option("--transe-table", type=click.Path(exists=True), default=None)
def serve(host, port, catalog_path, scenarios_paths, ckpt, transe_table):
    """Run the HTTP session service."""
    import uvicorn

    from .service import create_app

    app = create_app(_build_manager(catalog_path, scenarios_paths, ckpt, transe_table))
    uvicorn.run(app, host=host, port=port, log_level="info")


@main.command("chat")
@click.option("--agent", default="oracle", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--with-history/--no-history", default=True, show_default=True)
@click.option("--catalog", "catalog_path", type=click.Path(exists=True), default=None)
@click.option("--ckpt", type=click.Path(exists=True), default=None)
@click.option("--transe-table", type=click.Path(exists=True), default=None)
def chat(agent, seed, with_history, catalog_path, ckpt, transe_table):
    """Play the user in the terminal against any agent."""
    manager = _build_manager(catalog_path, (), ckpt, transe_table)
    session = manager.create(agent, generate={"seed": seed, "with_history": with_history})
    sid = session["session_id"]
    brief = session["user_brief"]
    click.echo(f"session {sid} vs {agent}")
    click.echo(f"your target restaurant: {brief['ground_truth']}")
    click.echo("your preferences: " + json.dumps(brief["preference"]))
    menus = session["menus"]
    click.echo("acts: " + ", ".join(menus["acts"]))
    click.echo(
        'turn syntax: <act> [item=...] [slot=...] [value=...] [sentiment=pos_on|neg_on|neu_on]'
    )
    while True:
        try:
            line = click.prompt("you", default="", show_default=False)
        except (EOFError, click.Abort):
            break
        if not line.strip():
            continue
        if line.strip() in ("quit", "exit"):
            break
        tokens = line.split()
        payload = {"act": tokens[0]}
        for token in tokens[1:]:
            key, _, value = token.partition("=")
            payload[key] = value
        try:
            response = manager.post_turn(sid, payload)
        except Exception as exc:
            click.echo(f"rejected: {exc}")
            continue
        if response["agent_action"]:
            click.echo(f"agent: {json.dumps(response['agent_action'])}")
        if response["graph_delta"]:
            click.echo(f"graph += {response['graph_delta']}")
        if response["explanations"]:
            for path in response["explanations"][:3]:
                click.echo("  why: " + " -> ".join(path))
        if response["status"] != "open":
            click.echo(f"session {response['status']}")
            break


if __name__ == "__main__":
    main()
