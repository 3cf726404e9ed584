"""Operator entry points.

Commands: ``train`` (fit the routing policy and the stop classifier),
``route`` (answer one question), ``eval`` (metrics over a dataset),
``stats`` (re-print a written report), ``oracle`` (brute-force benchmark),
``make-benchmark`` (materialize the shipped synthetic benchmark).

Exit codes: 0 success, 1 usage/config error, 2 runtime/backend error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, load_config, load_dataset, write_dataset
from .encoding import HashedNgramEncoder
from .environment import EpisodeConfig, RoutingEnv, run_episode, write_trace
from .experts import BENCHMARK_PROFILES, BackendError, generate_questions
from .oracle import UniformRandomPolicy, evaluate_policy_vs_oracle, route_length_histogram
from .policy import Policy, load_policy, save_policy
from .ppo import train as ppo_train
from .rewards import RewardConfig
from .terminator import load_terminator, save_terminator, train_terminator
from .types import Question, render_state


@click.group()
def cli() -> None:
    """Dynamic expert routing: train, route, evaluate."""


@cli.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(), help="TOML run config.")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(), help="JSONL training questions.")
@click.option("--out-dir", required=True, type=click.Path(), help="Output directory for artifacts.")
@click.option("--seed", default=0, show_default=True, help="Random seed.")
@click.option("--dump-trajectories", is_flag=True, help="Also write one record per collected step.")
def cmd_train(config_path: str, dataset_path: str, out_dir: str, seed: int,
              dump_trajectories: bool) -> None:
    """Train the routing policy; writes checkpoints and the epoch log."""
    cfg = load_config(config_path)
    questions = load_dataset(dataset_path)
    pool = cfg.build_pool()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    encoder = HashedNgramEncoder(dim=cfg.encoder.dim)
    policy = Policy(encoder, n_experts=len(pool), hidden=cfg.encoder.hidden, seed=seed)
    env = RoutingEnv(pool, EpisodeConfig(reward=cfg.reward, scorer=cfg.build_scorer()))
    rng = np.random.default_rng(seed)

    dump_fh = open(out / "trajectories.jsonl", "w", encoding="utf-8") if dump_trajectories else None
    try:
        result = ppo_train(questions, env, policy, cfg.ppo, rng,
                           on_episode=_trajectory_dumper(dump_fh))
    finally:
        if dump_fh:
            dump_fh.close()

    save_policy(out / "policy.npz", policy, expert_names=list(pool.names))
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for stats in result.log:
            fh.write(json.dumps(stats.as_record()) + "\n")

    labeled = [(s, score >= cfg.reward.p0) for s, score in result.stop_examples]
    with open(out / "terminator_train.jsonl", "w", encoding="utf-8") as fh:
        for (state, score), (_, label) in zip(result.stop_examples, labeled):
            fh.write(json.dumps({"state": render_state(state), "score": score,
                                 "label": bool(label)}) + "\n")
    if any(lbl for _, lbl in labeled) and not all(lbl for _, lbl in labeled):
        terminator, accuracy = train_terminator(labeled, encoder, cfg.terminator)
        save_terminator(out / "terminator.npz", terminator, cfg.encoder.dim)
        click.echo(f"terminator held-out accuracy: {accuracy:.3f}")
    else:
        click.echo("terminator not trained: harvested labels are single-class")

    final = result.log[-1]
    click.echo(f"epochs: {len(result.log)} (converged: {result.converged})")
    quality = ("n/a" if final.mean_terminal_quality is None
               else f"{final.mean_terminal_quality:.4f}")
    click.echo(f"final mean terminal quality: {quality}")


def _trajectory_dumper(fh):
    if fh is None:
        return None

    def dump(epoch: int, result) -> None:
        for k, ts in enumerate(result.trajectory):
            fh.write(json.dumps({
                "epoch": epoch,
                "question_id": result.question.id,
                "step": k,
                "state": render_state(ts.state),
                "expert_index": ts.action.expert_index,
                "reward": ts.reward,
                "value": ts.value,
                "old_log_prob": ts.old_log_prob,
                "advantage": ts.advantage,
                "return_to_go": ts.return_to_go,
            }) + "\n")

    return dump


@cli.command("route")
@click.option("--checkpoint", required=True, type=click.Path(), help="Trained policy .npz file.")
@click.option("--config", "config_path", required=True, type=click.Path(), help="TOML run config (pool definition).")
@click.option("--terminator/--oracle", "use_terminator", default=False,
              help="Stop via the trained classifier instead of the reference score.")
@click.option("--max-steps", default=None, type=int, help="Override the step budget.")
@click.option("--topic", default=None, type=int, help="Topic tag (synthetic pools).")
@click.option("--difficulty", default=None, type=float, help="Difficulty (synthetic pools).")
@click.option("--reference", default=None, help="Reference answer for overlap scoring.")
@click.argument("question_text")
def cmd_route(checkpoint: str, config_path: str, use_terminator: bool,
              max_steps: int | None, topic: int | None, difficulty: float | None,
              reference: str | None, question_text: str) -> None:
    """Route a single question and print the trace."""
    cfg = load_config(config_path)
    pool = cfg.build_pool()
    policy = _load_policy_checked(checkpoint, pool)
    reward = cfg.reward if max_steps is None else _with_t_max(cfg.reward, max_steps)

    terminator = None
    termination = "oracle"
    if use_terminator:
        terminator_path = Path(checkpoint).parent / "terminator.npz"
        if not terminator_path.exists():
            raise ConfigError(f"no terminator checkpoint at {terminator_path}")
        terminator, _ = load_terminator(terminator_path)
        termination = "terminator"

    question = Question(id="cli", text=question_text, reference_answer=reference,
                        topic=topic, difficulty=difficulty)
    episode_cfg = EpisodeConfig(reward=reward, scorer=cfg.build_scorer(),
                                termination=termination, terminator=terminator)
    result = run_episode(question, policy, pool, episode_cfg, mode="greedy")

    for k, (ts, score) in enumerate(zip(result.trajectory, result.step_scores)):
        name = pool.names[ts.action.expert_index]
        if termination == "oracle" and score is not None:
            click.echo(f"step {k}: {name} (score {score:.3f})")
        else:
            click.echo(f"step {k}: {name}")
    click.echo(f"total cost: {result.total_cost:g}")
    click.echo("answer:")
    click.echo(result.route.terminal_answer.text)


@cli.command("eval")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["oracle", "terminator", "none"]),
              default="oracle", show_default=True,
              help="Stop rule: reference score, trained classifier, or full budget.")
@click.option("--selection", type=click.Choice(["greedy", "sample"]),
              default="greedy", show_default=True, help="Action selection.")
@click.option("--seed", default=0, show_default=True, help="Seed for sampled selection.")
@click.option("--out", "out_path", default=None, type=click.Path(), help="Write the report (JSONL).")
@click.option("--trace", "trace_path", default=None, type=click.Path(), help="Write per-step episode traces.")
def cmd_eval(checkpoint: str, config_path: str, dataset_path: str, mode: str,
             selection: str, seed: int, out_path: str | None,
             trace_path: str | None) -> None:
    """Evaluation over a dataset: quality, cost, route lengths."""
    cfg = load_config(config_path)
    questions = load_dataset(dataset_path)
    pool = cfg.build_pool()
    policy = _load_policy_checked(checkpoint, pool)

    terminator = None
    if mode == "terminator":
        terminator_path = Path(checkpoint).parent / "terminator.npz"
        if not terminator_path.exists():
            raise ConfigError(f"no terminator checkpoint at {terminator_path}")
        terminator, _ = load_terminator(terminator_path)

    episode_cfg = EpisodeConfig(reward=cfg.reward, scorer=cfg.build_scorer(),
                                termination=mode, terminator=terminator)
    rng = np.random.default_rng(seed) if selection == "sample" else None
    results = [run_episode(q, policy, pool, episode_cfg, mode=selection, rng=rng)
               for q in questions]

    rows = [{
        "question_id": r.question.id,
        "terminal_quality": r.terminal_quality,
        "total_cost": r.total_cost,
        "route": list(r.route.expert_indices()),
        "terminated_by": r.terminated_by,
    } for r in results]
    qualities = [r.terminal_quality for r in results if r.terminal_quality is not None]
    lengths = [r.route_length for r in results]
    summary = {
        "n_questions": len(results),
        "mean_terminal_quality": float(np.mean(qualities)) if qualities else None,
        "mean_cost": float(np.mean([r.total_cost for r in results])),
        "mean_route_length": float(np.mean(lengths)),
        "route_length_histogram": route_length_histogram(lengths, cfg.reward.t_max),
    }
    if out_path:
        _write_report(out_path, rows, summary)
    if trace_path:
        write_trace(trace_path, results, pool)
    _print_summary(summary)


@cli.command("stats")
@click.option("--report", "report_path", required=True, type=click.Path(),
              help="Report file written by eval or oracle.")
def cmd_stats(report_path: str) -> None:
    """Print the metrics table from a previously written report."""
    path = Path(report_path)
    if not path.exists():
        raise ConfigError(f"report file not found: {path}")
    summary = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "summary" in record:
                summary = record["summary"]
    if summary is None:
        raise ConfigError(f"{path} contains no summary record")
    _print_summary(summary)


@cli.command("oracle")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--checkpoint", default=None, type=click.Path(),
              help="Compare a trained policy (default: uniform random).")
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--jobs", default=1, show_default=True, help="Parallel workers over questions.")
@click.option("--quality-only", is_flag=True, help="Rank routes by quality instead of shaped reward.")
def cmd_oracle(config_path: str, dataset_path: str, checkpoint: str | None,
               out_path: str | None, seed: int, jobs: int, quality_only: bool) -> None:
    """Brute-force optimal routes and compare a policy against them."""
    cfg = load_config(config_path)
    questions = load_dataset(dataset_path)
    pool = cfg.build_pool()
    policy = (_load_policy_checked(checkpoint, pool) if checkpoint
              else UniformRandomPolicy(len(pool)))
    episode_cfg = EpisodeConfig(reward=cfg.reward, scorer=cfg.build_scorer())
    report = evaluate_policy_vs_oracle(
        questions, policy, pool, episode_cfg,
        np.random.default_rng(seed), quality_only=quality_only, jobs=jobs,
    )
    if out_path:
        _write_report(out_path, report["rows"], report["summary"])
    summary = report["summary"]
    click.echo(f"questions: {summary['n_questions']}")
    click.echo(f"mean oracle quality: {summary['mean_oracle_quality']:.4f}")
    click.echo(f"mean policy quality: {summary['mean_policy_quality']:.4f}")
    click.echo(f"mean random quality: {summary['mean_random_quality']:.4f}")
    click.echo(f"policy/oracle: {summary['policy_vs_oracle']:.4f}")
    click.echo(f"policy/random: {summary['policy_vs_random']:.4f}")
    click.echo("route lengths: " + _format_histogram(summary["route_length_histogram"]))


@cli.command("make-benchmark")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", default=7, show_default=True)
@click.option("--train-size", default=256, show_default=True)
@click.option("--eval-size", default=320, show_default=True)
def cmd_make_benchmark(out_dir: str, seed: int, train_size: int, eval_size: int) -> None:
    """Write the shipped synthetic benchmark: config plus datasets."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "train.jsonl", generate_questions(train_size, seed, id_prefix="train"))
    write_dataset(out / "eval.jsonl", generate_questions(eval_size, seed + 1, id_prefix="eval"))
    (out / "config.toml").write_text(benchmark_config_toml(), encoding="utf-8")
    click.echo(f"benchmark written to {out}")


def benchmark_config_toml() -> str:
    lines = []
    for profile in BENCHMARK_PROFILES:
        skills = ", ".join(f"{s}" for s in profile.skills)
        lines.append(
            "[[pool.experts]]\n"
            'kind = "synthetic"\n'
            f'name = "{profile.name}"\n'
            f"skills = [{skills}]\n"
            f"transfer_efficiency = {profile.transfer_efficiency}\n"
            f"cost = {profile.cost}\n"
            f"noise_sigma = {profile.noise_sigma}\n"
        )
    lines.append(
        "[reward]\n"
        "alpha = 0.001\n"
        "beta = 0.5\n"
        "gamma = 0.1\n"
        "p0 = 0.73\n"
        "t_max = 3\n"
        'scorer = "latent"\n'
    )
    lines.append(
        "[ppo]\n"
        "clip_epsilon = 0.2\n"
        "discount = 1.0\n"
        "buffer_size = 64\n"
        "actor_lr = 0.002\n"
        "critic_lr = 0.005\n"
        "batch_size = 16\n"
        "max_epochs = 60\n"
        "plateau_window = 10\n"
        "plateau_tol = 0.001\n"
    )
    lines.append("[encoder]\ndim = 1024\nhidden = 128\n")
    lines.append("[terminator]\nthreshold = 0.5\n")
    return "\n".join(lines)


def _with_t_max(reward: RewardConfig, t_max: int) -> RewardConfig:
    return RewardConfig(alpha=reward.alpha, beta=reward.beta, gamma=reward.gamma,
                        p0=reward.p0, t_max=t_max)


def _load_policy_checked(checkpoint: str, pool) -> Policy:
    path = Path(checkpoint)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    policy, _ = load_policy(path)
    if policy.n_experts != len(pool):
        raise ConfigError(
            f"checkpoint/pool mismatch: checkpoint expects {policy.n_experts} "
            f"experts, config defines {len(pool)}"
        )
    return policy


def _write_report(path: str | Path, rows: list[dict], summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
        fh.write(json.dumps({"summary": summary}) + "\n")


def _format_histogram(histogram: dict[str, float]) -> str:
    return "  ".join(f"{key}: {value:.1f}%" for key, value in histogram.items())


def _print_summary(summary: dict) -> None:
    click.echo(f"questions: {summary['n_questions']}")
    if summary.get("mean_terminal_quality") is not None:
        click.echo(f"mean terminal quality: {summary['mean_terminal_quality']:.4f}")
    if "mean_policy_quality" in summary:
        click.echo(f"mean policy quality: {summary['mean_policy_quality']:.4f}")
        click.echo(f"mean oracle quality: {summary['mean_oracle_quality']:.4f}")
        click.echo(f"mean random quality: {summary['mean_random_quality']:.4f}")
    if "mean_cost" in summary:
        click.echo(f"mean cost: {summary['mean_cost']:.4f}")
    if "mean_route_length" in summary:
        click.echo(f"mean route length: {summary['mean_route_length']:.4f}")
    click.echo("route lengths: " + _format_histogram(summary["route_length_histogram"]))


def main(argv: list[str] | None = None) -> int:
    try:
        cli(args=argv, prog_name="der", standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        return 1
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except BackendError as exc:
        click.echo(f"backend error: {exc}", err=True)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
