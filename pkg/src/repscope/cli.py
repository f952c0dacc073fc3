"""Command-line pipeline driver.

Every subcommand writes its artifacts plus a run manifest (inputs with
digests, normalized config, config hash, tool versions) into the output
directory; artifacts embed the manifest hash so `repscope --verify DIR`
can re-check a finished run. Reruns with identical configuration produce
byte-identical primary artifacts, so no artifact carries a timestamp.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .behavior import AccuracyTable, accuracy_summary, learning_onset, smooth_curve
from .choicelog import load_logs, save_log
from .embeddings import EmbeddingMatrix, load_embedding, load_manifest, load_representations
from .errors import RepscopeError
from .glmm import fit_glmm
from .learners import DEFAULT_ALPHA_GRID, LearnerConfig, sequential_rollout
from .policy import (
    compare_representations,
    loo_cv_nll,
    scores_to_frame,
    scores_to_json,
)
from .rsa import cka_difference, cka_matrix_to_csv, differences_to_csv, pairwise_cka
from .simulate import AgentConfig, make_synthetic_candidates, recovery_experiment, simulate_participant
from .tasks import generate_task, spawn_seeds, task_from_json, task_to_json

log = logging.getLogger("repscope")


def _canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out_dir: Path, subcommand: str, config: dict, inputs: dict) -> str:
    import scipy

    doc = {
        "tool": "repscope",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "config_hash": _sha256_text(_canonical(config)),
        "inputs": {
            label: {"path": str(p), "sha256": _sha256_file(Path(p))}
            for label, p in inputs.items()
        },
        "versions": {
            "python": ".".join(map(str, sys.version_info[:3])),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    manifest_hash = _sha256_text(_canonical(doc))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_text(
        json.dumps({"manifest": doc, "manifest_hash": manifest_hash}, indent=2)
    )
    return manifest_hash


def write_json_artifact(path: Path, payload: dict, manifest_hash: str):
    path.write_text(
        json.dumps({"run_manifest_hash": manifest_hash, **payload}, indent=2)
    )


def stamp_csv(path: Path, manifest_hash: str):
    body = path.read_text()
    path.write_text(f"# run_manifest_hash: {manifest_hash}\n" + body)


def verify_run(run_dir: Path) -> list[str]:
    """Recompute and check manifest, input, and artifact hashes."""
    problems = []
    manifest_path = run_dir / "run_manifest.json"
    if not manifest_path.exists():
        return [f"no run_manifest.json in {run_dir}"]
    doc = json.loads(manifest_path.read_text())
    manifest, stored_hash = doc["manifest"], doc["manifest_hash"]
    if _sha256_text(_canonical(manifest)) != stored_hash:
        problems.append("manifest hash mismatch")
    if _sha256_text(_canonical(manifest["config"])) != manifest["config_hash"]:
        problems.append("config hash mismatch")
    for label, entry in manifest["inputs"].items():
        p = Path(entry["path"])
        if not p.exists():
            problems.append(f"input {label}: missing file {p}")
        elif _sha256_file(p) != entry["sha256"]:
            problems.append(f"input {label}: contents changed ({p})")
    for artifact in sorted(run_dir.rglob("*")):
        if artifact == manifest_path or not artifact.is_file():
            continue
        if artifact.suffix == ".json":
            try:
                payload = json.loads(artifact.read_text())
            except json.JSONDecodeError:
                problems.append(f"{artifact.name}: not valid JSON")
                continue
            if isinstance(payload, dict) and "run_manifest_hash" in payload:
                if payload["run_manifest_hash"] != stored_hash:
                    problems.append(f"{artifact.name}: embedded hash differs")
        elif artifact.suffix == ".csv":
            first = artifact.read_text().split("\n", 1)[0]
            if first.startswith("# run_manifest_hash:"):
                if first.split(":", 1)[1].strip() != stored_hash:
                    problems.append(f"{artifact.name}: embedded hash differs")
    return problems


def _learner_config(learner, alpha_grid, pca_k) -> LearnerConfig:
    grid = (
        tuple(float(a) for a in alpha_grid.split(","))
        if alpha_grid
        else DEFAULT_ALPHA_GRID
    )
    return LearnerConfig(kind=learner, alpha_grid=grid, pca_k=pca_k)


def _merged(ctx, config_file: str | None, **values):
    """Config-file defaults with explicit command-line overrides."""
    merged = dict(values)
    if config_file:
        doc = json.loads(Path(config_file).read_text())
        for key, file_value in doc.items():
            if key not in merged:
                raise click.UsageError(f"unknown config key {key!r}")
            source = ctx.get_parameter_source(key)
            if source is not None and source.name == "COMMANDLINE":
                continue
            merged[key] = file_value
    return merged


@click.group(invoke_without_command=True, no_args_is_help=True)
@click.option(
    "--verify",
    "verify_path",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Check the run manifest and artifact hashes of a finished run directory.",
)
@click.pass_context
def main(ctx, verify_path):
    """Task generation, simulation, and behavioral model comparison."""
    level = os.environ.get("REPSCOPE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    if verify_path is not None:
        problems = verify_run(verify_path)
        if problems:
            for p in problems:
                click.echo(f"FAIL {p}")
            ctx.exit(1)
        click.echo(f"OK {verify_path} verified")
        ctx.exit(0)


@main.command("gen-task")
@click.option("--embedding", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--feature", required=True)
@click.option("--task-kind", "task_kind", type=click.Choice(["category", "reward"]), default="category")
@click.option("--trials", type=int, default=None, help="Must match the task kind's size (120/60).")
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.pass_context
def gen_task(ctx, embedding, feature, task_kind, trials, seed, out, config_file):
    """Generate one task from an embedding feature."""
    cfg = _merged(
        ctx, config_file,
        embedding=str(embedding), feature=feature, task_kind=task_kind,
        trials=trials, seed=seed,
    )
    try:
        emb = load_embedding(cfg["embedding"])
        task = generate_task(emb, cfg["feature"], cfg["task_kind"], cfg["seed"])
        if cfg["trials"] is not None and cfg["trials"] != task.n_trials:
            raise RepscopeError(
                f"{cfg['task_kind']} tasks have {task.n_trials} trials, not {cfg['trials']}"
            )
        out = Path(out)
        manifest_hash = write_run_manifest(
            out, "gen-task", cfg, {"embedding": cfg["embedding"]}
        )
        payload = json.loads(task_to_json(task))
        write_json_artifact(out / "task.json", payload, manifest_hash)
        click.echo(f"wrote {out / 'task.json'}")
    except RepscopeError as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--embedding", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--feature", required=True)
@click.option("--task-kind", "task_kind", type=click.Choice(["category", "reward"]), default="category")
@click.option("--agents", type=int, default=5)
@click.option("--seed", type=int, default=0)
@click.option("--learner", type=click.Choice(["logistic_l2", "logistic_l1", "bayes_ridge", "ard_ridge"]), default=None)
@click.option("--alpha-grid", "alpha_grid", default="1.0")
@click.option("--pca-k", "pca_k", type=int, default=None)
@click.option("--temperature", type=float, default=0.3)
@click.option("--lapse", type=float, default=0.02)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.pass_context
def simulate(ctx, embedding, feature, task_kind, agents, seed, learner, alpha_grid, pca_k, temperature, lapse, out, config_file):
    """Simulate synthetic participants playing generated tasks."""
    cfg = _merged(
        ctx, config_file,
        embedding=str(embedding), feature=feature, task_kind=task_kind,
        agents=agents, seed=seed, learner=learner, alpha_grid=alpha_grid,
        pca_k=pca_k, temperature=temperature, lapse=lapse,
    )
    try:
        if cfg["learner"] is None:
            cfg["learner"] = "logistic_l2" if cfg["task_kind"] == "category" else "bayes_ridge"
        emb = load_embedding(cfg["embedding"])
        learner_cfg = _learner_config(cfg["learner"], cfg["alpha_grid"], cfg["pca_k"])
        out = Path(out)
        manifest_hash = write_run_manifest(
            out, "simulate", cfg, {"embedding": cfg["embedding"]}
        )
        (out / "tasks").mkdir(parents=True, exist_ok=True)
        (out / "logs").mkdir(exist_ok=True)
        (out / "trajectories").mkdir(exist_ok=True)
        task_seeds = spawn_seeds(cfg["seed"], cfg["agents"])
        agent_seeds = spawn_seeds(cfg["seed"] + 1, cfg["agents"])
        for i in range(cfg["agents"]):
            pid = f"agent-{i:03d}"
            task = generate_task(emb, cfg["feature"], cfg["task_kind"], task_seeds[i])
            agent = AgentConfig(
                representation="generator",
                learner=learner_cfg,
                temperature=cfg["temperature"],
                lapse_rate=cfg["lapse"],
                seed=agent_seeds[i],
                alpha=learner_cfg.alpha_grid[0] if len(learner_cfg.alpha_grid) == 1 else None,
            )
            choice_log, traj = simulate_participant(
                task, agent, {"generator": emb}, participant_id=pid
            )
            (out / "tasks" / f"{pid}.json").write_text(task_to_json(task))
            save_log(choice_log, out / "logs" / f"{pid}.json")
            (out / "trajectories" / f"{pid}.json").write_text(traj.to_json())
        click.echo(f"simulated {cfg['agents']} agents into {out}")
    except RepscopeError as exc:
        raise click.ClickException(str(exc))


def _load_tasks_dir(path: Path):
    tasks = {}
    for p in sorted(Path(path).glob("*.json")):
        task = task_from_json(p.read_text())
        tasks[p.stem] = task
    return tasks


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--rep", "rep_name", required=True, help="Representation name from the manifest.")
@click.option("--logs", "logs_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--tasks", "tasks_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--learner", type=click.Choice(["logistic_l2", "logistic_l1", "bayes_ridge", "ard_ridge"]), default="logistic_l2")
@click.option("--alpha-grid", "alpha_grid", default=None)
@click.option("--pca-k", "pca_k", type=int, default=None)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.pass_context
def fit(ctx, manifest, rep_name, logs_dir, tasks_dir, learner, alpha_grid, pca_k, out, config_file):
    """Sequential-learner trajectories and LOO-CV policy score for one representation."""
    cfg = _merged(
        ctx, config_file,
        manifest=str(manifest), rep_name=rep_name, logs_dir=str(logs_dir),
        tasks_dir=str(tasks_dir), learner=learner, alpha_grid=alpha_grid,
        pca_k=pca_k,
    )
    try:
        reps = load_representations(load_manifest(cfg["manifest"]))
        if cfg["rep_name"] not in reps:
            raise RepscopeError(f"representation {cfg['rep_name']!r} not in manifest")
        logs = load_logs(cfg["logs_dir"])
        tasks = _load_tasks_dir(cfg["tasks_dir"])
        missing = sorted(set(logs) - set(tasks))
        if missing:
            raise RepscopeError(f"no task files for participants {missing}")
        learner_cfg = _learner_config(cfg["learner"], cfg["alpha_grid"], cfg["pca_k"])
        out = Path(out)
        manifest_hash = write_run_manifest(out, "fit", cfg, {"manifest": cfg["manifest"]})
        (out / "trajectories").mkdir(parents=True, exist_ok=True)
        preds = {}
        for pid in sorted(logs):
            traj = sequential_rollout(
                tasks[pid], reps[cfg["rep_name"]], learner_cfg,
                representation=cfg["rep_name"],
            )
            preds[pid] = traj
            (out / "trajectories" / f"{pid}.json").write_text(traj.to_json())
        kind = next(iter(logs.values())).task_kind
        score = loo_cv_nll(preds, logs, kind, representation=cfg["rep_name"])
        write_json_artifact(out / "nll_score.json", score.to_dict(), manifest_hash)
        click.echo(
            f"{cfg['rep_name']}: total NLL {score.total_nll:.2f} "
            f"(chance {score.chance_nll:.2f}) over {score.n_choices} choices"
        )
    except RepscopeError as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--logs", "logs_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--tasks", "tasks_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--learner", type=click.Choice(["logistic_l2", "logistic_l1", "bayes_ridge", "ard_ridge"]), default=None)
@click.option("--alpha-grid", "alpha_grid", default=None)
@click.option("--pca-k", "pca_k", type=int, default=None)
@click.option("--workers", type=int, default=1)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.pass_context
def compare(ctx, manifest, logs_dir, tasks_dir, learner, alpha_grid, pca_k, workers, out, config_file):
    """Rank every representation in the manifest by cross-validated NLL."""
    cfg = _merged(
        ctx, config_file,
        manifest=str(manifest), logs_dir=str(logs_dir), tasks_dir=str(tasks_dir),
        learner=learner, alpha_grid=alpha_grid, pca_k=pca_k, workers=workers,
    )
    try:
        reps = load_representations(load_manifest(cfg["manifest"]))
        logs = load_logs(cfg["logs_dir"])
        tasks = _load_tasks_dir(cfg["tasks_dir"])
        kind = next(iter(logs.values())).task_kind
        if cfg["learner"] is None:
            cfg["learner"] = "logistic_l2" if kind == "category" else "bayes_ridge"
        learner_cfg = _learner_config(cfg["learner"], cfg["alpha_grid"], cfg["pca_k"])
        out = Path(out)
        manifest_hash = write_run_manifest(
            out, "compare", cfg, {"manifest": cfg["manifest"]}
        )
        scores = compare_representations(
            reps, logs, tasks, learner_cfg, n_workers=cfg["workers"]
        )
        frame = scores_to_frame(scores)
        frame.to_csv(out / "nll_scores.csv", index=False)
        stamp_csv(out / "nll_scores.csv", manifest_hash)
        write_json_artifact(
            out / "nll_scores.json",
            {"scores": [s.to_dict() for s in scores]},
            manifest_hash,
        )
        click.echo(frame.to_string(index=False))
    except RepscopeError as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--anchor-a", "anchor_a", default=None, help="Reference representation for difference scores.")
@click.option("--anchor-b", "anchor_b", multiple=True, help="Anchor set compared against anchor-a (repeatable).")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.pass_context
def rsa(ctx, manifest, anchor_a, anchor_b, out, config_file):
    """Pairwise linear CKA (and anchored difference scores)."""
    cfg = _merged(
        ctx, config_file,
        manifest=str(manifest), anchor_a=anchor_a, anchor_b=list(anchor_b),
    )
    try:
        reps = load_representations(load_manifest(cfg["manifest"]))
        out = Path(out)
        manifest_hash = write_run_manifest(out, "rsa", cfg, {"manifest": cfg["manifest"]})
        names, matrix = pairwise_cka(reps)
        cka_matrix_to_csv(names, matrix, out / "cka_matrix.csv")
        stamp_csv(out / "cka_matrix.csv", manifest_hash)
        if cfg["anchor_a"]:
            anchors_b = {name: reps[name] for name in cfg["anchor_b"]}
            others = {
                k: v
                for k, v in reps.items()
                if k != cfg["anchor_a"] and k not in anchors_b
            }
            diffs = cka_difference(
                (cfg["anchor_a"], reps[cfg["anchor_a"]]), anchors_b, others
            )
            differences_to_csv(diffs, out / "cka_differences.csv")
            stamp_csv(out / "cka_differences.csv", manifest_hash)
            write_json_artifact(out / "cka_differences.json", {"differences": diffs}, manifest_hash)
        click.echo(f"wrote CKA matrix for {len(names)} representations to {out}")
    except (RepscopeError, KeyError) as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--logs", "logs_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--chance", type=float, default=0.5)
@click.option("--alpha-level", "alpha_level", type=float, default=0.05)
@click.option("--window", type=int, default=10)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.pass_context
def stats(ctx, logs_dir, chance, alpha_level, window, out, config_file):
    """Accuracy curves, per-trial tests against chance, and learning onset."""
    cfg = _merged(
        ctx, config_file,
        logs_dir=str(logs_dir), chance=chance, alpha_level=alpha_level, window=window,
    )
    try:
        logs = load_logs(cfg["logs_dir"])
        table = AccuracyTable.from_choice_logs(logs)
        out = Path(out)
        manifest_hash = write_run_manifest(out, "stats", cfg, {})
        summary = accuracy_summary(table, cfg["chance"])
        summary.to_csv(out / "accuracy_summary.csv", index=False)
        stamp_csv(out / "accuracy_summary.csv", manifest_hash)
        smoothed = smooth_curve(table.values.mean(axis=0), cfg["window"])
        with open(out / "smoothed_accuracy.csv", "w") as fh:
            fh.write("block,mean_accuracy\n")
            for i, v in enumerate(smoothed):
                fh.write(f"{i},{v!r}\n")
        stamp_csv(out / "smoothed_accuracy.csv", manifest_hash)
        onset = learning_onset(table, cfg["chance"], cfg["alpha_level"])
        write_json_artifact(
            out / "learning_onset.json",
            {
                "onset_trial": onset,
                "alpha_level": cfg["alpha_level"],
                "chance": cfg["chance"],
                "n_participants": len(table.participant_ids),
            },
            manifest_hash,
        )
        click.echo(
            "learning onset: "
            + (f"trial {onset}" if onset is not None else "not found")
        )
    except RepscopeError as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--embedding", type=click.Path(exists=True, path_type=Path), default=None,
              help="Generating embedding; omitted -> a seeded synthetic one.")
@click.option("--feature", default="f0")
@click.option("--task-kind", "task_kind", type=click.Choice(["category", "reward"]), default="category")
@click.option("--agents", type=int, default=20)
@click.option("--candidates", type=int, default=3, help="Number of random distractor representations.")
@click.option("--seed", type=int, default=0)
@click.option("--workers", type=int, default=1)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.pass_context
def recover(ctx, embedding, feature, task_kind, agents, candidates, seed, workers, out, config_file):
    """Representation-recovery harness: simulate agents, rank candidates."""
    cfg = _merged(
        ctx, config_file,
        embedding=str(embedding) if embedding else None, feature=feature,
        task_kind=task_kind, agents=agents, candidates=candidates, seed=seed,
        workers=workers,
    )
    try:
        inputs = {}
        if cfg["embedding"]:
            base = load_embedding(cfg["embedding"])
            inputs["embedding"] = cfg["embedding"]
        else:
            rng = np.random.default_rng(cfg["seed"] + 7919)
            base = EmbeddingMatrix(
                tuple(f"s{i:04d}" for i in range(240)),
                tuple(f"f{j}" for j in range(50)),
                rng.standard_normal((240, 50)),
            )
        cand = make_synthetic_candidates(
            base, n_random=cfg["candidates"], seed=cfg["seed"] + 1
        )
        out = Path(out)
        manifest_hash = write_run_manifest(out, "recover", cfg, inputs)
        result = recovery_experiment(
            "generator",
            cand,
            feature=cfg["feature"],
            kind=cfg["task_kind"],
            n_agents=cfg["agents"],
            seed=cfg["seed"],
            n_workers=cfg["workers"],
        )
        write_json_artifact(
            out / "recovery.json",
            {
                "generating": result.generating,
                "generating_rank": result.generating_rank,
                "margin_nats": result.margin,
                "n_agents": result.n_agents,
                "seed": result.seed,
                "ranking": [s.to_dict() for s in result.ranking],
            },
            manifest_hash,
        )
        frame = scores_to_frame(list(result.ranking))
        frame.to_csv(out / "recovery_ranking.csv", index=False)
        stamp_csv(out / "recovery_ranking.csv", manifest_hash)
        click.echo(result.summary())
    except RepscopeError as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--config", "config_file", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--serve-addr", "serve_addr", default="127.0.0.1:8000")
def serve(config_file, serve_addr):
    """Run the experiment session server."""
    from .server import ServerConfig, run_server

    host, _, port = serve_addr.partition(":")
    config = ServerConfig.from_file(config_file)
    run_server(config, host=host or "127.0.0.1", port=int(port or 8000))


if __name__ == "__main__":
    main()
