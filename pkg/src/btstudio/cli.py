"""Command-line entry points: the API server, the headless benchmark
matrix, and one-off tree simulation.
"""

from __future__ import annotations

import json
import pathlib
import time

import click

from .assistant import Budget, VariantConfig, VARIANT_NAMES, run_headless
from .llm import HttpCompletionProvider, scripted_provider
from .scoring import ScoreWeights, normalize
from .tree import deserialize, metrics, serialize
from .world import (baseline_tree, goal_condition_tree, load_best_known,
                    load_scenario, run_episode, scenario_names)


def _weights(path) -> ScoreWeights:
    return ScoreWeights.from_file(path) if path else ScoreWeights()


def _provider(kind: str, base_url: str, model: str):
    if kind == "remote":
        if not base_url or not model:
            raise click.UsageError("--base-url and --model are required with "
                                   "--provider remote")
        return HttpCompletionProvider(base_url, model)
    return scripted_provider()


@click.group()
def main():
    """Behavior-tree workbench: simulator, assistant, service, benchmarks."""


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True, type=int)
@click.option("--provider", "provider_kind", default="mock",
              type=click.Choice(["mock", "remote"]), show_default=True)
@click.option("--base-url", default="", help="remote provider endpoint")
@click.option("--model", default="", help="remote provider model name")
@click.option("--weights", "weights_path", type=click.Path(exists=True),
              default=None, help="score weight overrides (key = value lines)")
@click.option("--logs-dir", type=click.Path(), default=None,
              help="directory for per-session JSONL logs")
@click.option("--clock-seconds", default=900.0, show_default=True, type=float)
@click.option("--frontend-dir", type=click.Path(exists=True), default=None,
              help="serve a built front end from this directory")
def serve(host, port, provider_kind, base_url, model, weights_path, logs_dir,
          clock_seconds, frontend_dir):
    """Run the HTTP + event-stream API."""
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig(
        weights=_weights(weights_path),
        provider_kind=provider_kind,
        provider_base_url=base_url,
        provider_model=model,
        logs_dir=logs_dir,
        clock_seconds=clock_seconds,
        frontend_dir=frontend_dir,
    )
    uvicorn.run(create_app(config), host=host, port=port)


@main.command()
@click.option("--scenario", "scenarios", multiple=True,
              default=("cubes_bowl",), show_default=True)
@click.option("--variant", "variants", multiple=True, default=("FULL",),
              show_default=True)
@click.option("--seeds", default="1,2,3,4,5", show_default=True,
              help="comma-separated rng seeds")
@click.option("--budget-evals", type=int, default=None,
              help="episode evaluations per run (deterministic)")
@click.option("--budget-seconds", type=float, default=None,
              help="wall-clock budget per run")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="write results as JSON lines")
@click.option("--weights", "weights_path", type=click.Path(exists=True),
              default=None)
@click.option("--provider", "provider_kind", default="mock",
              type=click.Choice(["mock", "remote"]), show_default=True)
@click.option("--base-url", default="")
@click.option("--model", default="")
@click.option("--update-baselines", is_flag=True,
              help="refresh best_known.json when a run improves on it")
@click.option("--baselines-path", type=click.Path(), default=None,
              help="best-known score file to update")
def benchmark(scenarios, variants, seeds, budget_evals, budget_seconds,
              out_path, weights_path, provider_kind, base_url, model,
              update_baselines, baselines_path):
    """Run the headless assistant across a scenario/variant matrix."""
    for name in scenarios:
        if name not in scenario_names():
            raise click.UsageError(f"unknown scenario {name!r}; "
                                   f"choose from {', '.join(scenario_names())}")
    for name in variants:
        if name.upper() not in VARIANT_NAMES:
            raise click.UsageError(f"unknown variant {name!r}; "
                                   f"choose from {', '.join(VARIANT_NAMES)}")
    if budget_evals is None and budget_seconds is None:
        budget_evals = 120
    seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    weights = _weights(weights_path)
    budget = Budget(max_evals=budget_evals, max_seconds=budget_seconds)
    rows = []
    best_seen: dict[str, float] = {}
    for scenario in scenarios:
        world = load_scenario(scenario)
        goal = goal_condition_tree(world)
        for variant_name in variants:
            variant = VariantConfig.preset(variant_name)
            try:
                results = run_headless(scenario, goal, budget, seed_list,
                                       variant=variant,
                                       provider=_provider(provider_kind,
                                                          base_url, model),
                                       weights=weights)
                for r in results:
                    rows.append({
                        "scenario": scenario, "variant": variant.name,
                        "seed": r.seed, "raw_score": r.raw_score,
                        "normalized_score": r.normalized_score,
                        "solved": r.solved, "evaluations": r.evaluations,
                        "wall_seconds": round(r.wall_seconds, 3),
                        "status": "ok",
                    })
                    if r.raw_score is not None:
                        prev = best_seen.get(scenario, float("-inf"))
                        best_seen[scenario] = max(prev, r.raw_score)
            except Exception as exc:
                rows.append({"scenario": scenario, "variant": variant.name,
                             "seed": None, "status": f"error: {exc}"})
    header = (f"{'scenario':14s} {'variant':11s} {'seed':>4s} "
              f"{'raw':>12s} {'norm':>7s} {'solved':>6s} {'wall':>7s}")
    click.echo(header)
    for row in rows:
        if row["status"] != "ok":
            click.echo(f"{row['scenario']:14s} {row['variant']:11s} "
                       f"{row['status']}")
            continue
        click.echo(f"{row['scenario']:14s} {row['variant']:11s} "
                   f"{row['seed']:4d} {row['raw_score']:12.1f} "
                   f"{(row['normalized_score'] or 0.0):7.2f} "
                   f"{str(row['solved']):>6s} {row['wall_seconds']:7.2f}")
    if out_path:
        with open(out_path, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        click.echo(f"wrote {len(rows)} rows to {out_path}")
    if update_baselines:
        path = pathlib.Path(baselines_path) if baselines_path else _packaged_baselines()
        known = json.loads(path.read_text()) if path.exists() else {}
        changed = False
        for scenario, score in best_seen.items():
            if score > known.get(scenario, float("-inf")):
                known[scenario] = score
                changed = True
                click.echo(f"new best for {scenario}: {score:.3f}")
        if changed:
            path.write_text(json.dumps(known, indent=2, sort_keys=True) + "\n")
            click.echo(f"updated {path}")
        else:
            click.echo("no baseline improvements")


def _packaged_baselines() -> pathlib.Path:
    from importlib import resources
    return pathlib.Path(str(resources.files("btstudio") / "data" / "best_known.json"))


@main.command()
@click.option("--scenario", required=True)
@click.option("--tree", "tree_path", type=click.Path(exists=True), required=True)
@click.option("--weights", "weights_path", type=click.Path(exists=True),
              default=None)
@click.option("--trace-out", type=click.Path(), default=None,
              help="write the per-tick trace as JSON lines")
def simulate(scenario, tree_path, weights_path, trace_out):
    """Score one tree on one scenario."""
    if scenario not in scenario_names():
        raise click.UsageError(f"unknown scenario {scenario!r}")
    world = load_scenario(scenario)
    weights = _weights(weights_path)
    tree = deserialize(pathlib.Path(tree_path).read_text())
    result = run_episode(tree, world, weights=weights)
    base = run_episode(baseline_tree(world), world, weights=weights).raw_score
    best_known = load_best_known().get(scenario)
    m = metrics(tree)
    click.echo(f"raw score:    {result.raw_score:.3f}")
    if best_known is not None and best_known > base:
        click.echo(f"normalized:   {normalize(result.raw_score, base, best_known):.2f}")
    click.echo(f"solved:       {result.solved}")
    click.echo(f"ticks:        {result.ticks_executed}")
    click.echo(f"root status:  {result.root_status}")
    click.echo(f"nodes/depth:  {m.node_count}/{m.max_depth}")
    if trace_out:
        pathlib.Path(trace_out).write_text(result.trace_jsonl() + "\n")
        click.echo(f"trace written to {trace_out}")


if __name__ == "__main__":
    main()
