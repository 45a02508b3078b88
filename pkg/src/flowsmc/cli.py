"""Operator entry point.

Batch subcommands only — runs write artifact files and print summaries; no
interactive loop. Exit codes: 0 success, 1 criterion or runtime failure,
2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import engine, instances, oracle
from .errors import ConfigError, FlowSMCError, InstanceTooLargeError, ShapeMismatchError
from .evals import SCORERS, scaling_metrics
from .gateway import GatewayConfig, LLMGateway
from .llm_prior import LLMPrior
from .priors import TabularPrior
from .refiners import NullRefiner, SoftmaxEditRefiner, SyntheticEpsilonRefiner
from .rewards import CallableReward, TabularReward
from .workflows import DEFAULT_HORIZON

_CONFIG_KEYS = {
    "N": "n_particles",
    "K": "rollouts_per_particle",
    "M": "refinements_per_round",
    "T": "horizon",
}


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _run_config(doc: dict, seed_override: "int | None", workers: "int | None") -> engine.RunConfig:
    kwargs = {}
    for short, long in _CONFIG_KEYS.items():
        if short in doc:
            kwargs[long] = doc[short]
        if long in doc:
            kwargs[long] = doc[long]
    for key in (
        "seed",
        "extend_temperature",
        "rollout_temperature",
        "refine_temperature",
        "resampling",
        "workers",
        "include_archive_in_pool",
    ):
        if key in doc:
            kwargs[key] = doc[key]
    if "refiner" in doc and isinstance(doc["refiner"], dict):
        kwargs["refiner"] = doc["refiner"].get("kind", "none")
    if seed_override is not None:
        kwargs["seed"] = seed_override
    if workers is not None:
        kwargs["workers"] = workers
    try:
        return engine.RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _build_prior(doc: dict, cfg: engine.RunConfig, base: Path):
    kind = doc.get("kind", "tabular")
    if kind == "tabular":
        return TabularPrior.from_json(base / doc["path"])
    if kind == "uniform":
        return TabularPrior.uniform(doc["alphabet"], cfg.horizon)
    if kind == "llm":
        gateway = LLMGateway(
            GatewayConfig(
                endpoint=doc.get("endpoint", ""),
                model=doc.get("model", "default-model"),
                mode=doc.get("mode", "live"),
                cassette_path=doc.get("cassette"),
            )
        )
        return LLMPrior(
            gateway,
            cfg.horizon,
            task=doc.get("task", ""),
            extend_temperature=cfg.extend_temperature,
            rollout_temperature=cfg.rollout_temperature,
        )
    raise ConfigError(f"unknown prior kind {kind!r}")


def _build_reward(doc: dict, base: Path):
    kind = doc.get("kind", "tabular")
    if kind == "tabular":
        return instances.load_reward(base / doc["path"])
    if kind == "constant":
        value = float(doc.get("value", 0.0))
        return CallableReward(lambda _wf: value)
    raise ConfigError(f"unknown reward kind {kind!r}")


def _build_refiner(doc: "dict | None", cfg: engine.RunConfig, prior):
    doc = doc or {"kind": "none"}
    kind = doc.get("kind", "none")
    if kind == "none":
        return NullRefiner()
    if kind == "epsilon":
        alphabet = doc.get("alphabet") or getattr(prior, "alphabet", None)
        return SyntheticEpsilonRefiner(
            float(doc.get("epsilon", 0.0)), alphabet=alphabet, horizon=cfg.horizon
        )
    if kind == "softmax_edit":
        gateway = LLMGateway(
            GatewayConfig(
                endpoint=doc.get("endpoint", ""),
                model=doc.get("model", "default-model"),
                mode=doc.get("mode", "live"),
                cassette_path=doc.get("cassette"),
            )
        )
        return SoftmaxEditRefiner(
            gateway,
            top_c=int(doc.get("top_c", 3)),
            temperature=float(doc.get("temperature", 0.1)),
            edit_temperature=cfg.refine_temperature,
        )
    raise ConfigError(f"unknown refiner kind {kind!r}")


# --- subcommands ----------------------------------------------------------------

def cmd_search(args) -> int:
    doc = _load_json(args.config)
    cfg = _run_config(doc, args.seed, args.workers)
    base = Path(args.config).parent
    prior = _build_prior(doc.get("prior", {}), cfg, base)
    reward = _build_reward(doc.get("reward", {}), base)
    refiner = _build_refiner(doc.get("refiner"), cfg, prior)
    out = Path(args.out) if args.out else Path("runs") / f"seed{cfg.seed}"
    result = engine.run(cfg, prior, reward, refiner, out_dir=out)
    print(
        json.dumps(
            {
                "best_reward": result.best.reward,
                "best_id": result.best.id,
                "archive_size": len(result.archive),
                "out_dir": str(out),
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_oracle_check(args) -> int:
    doc = _load_json(args.config)
    base = Path(args.config).parent
    if "prior_path" in doc:
        instance = instances.load_instance(
            base / doc["prior_path"], base / doc["reward_path"]
        )
    else:
        instance = instances.instance_a()
    n = int(doc.get("N", 5000))
    k = int(doc.get("K", 3))
    n_seeds = int(doc.get("seeds", 20))
    epsilons = doc.get("epsilons", [0.0, 0.1, 0.2])
    m_refine = int(doc.get("M", 500))
    seed0 = args.seed if args.seed is not None else int(doc.get("seed", 0))
    out = Path(args.out) if args.out else None

    checks = run_theorem_checks(
        instance, n=n, k=k, n_seeds=n_seeds, epsilons=epsilons, m_refine=m_refine,
        seed0=seed0, out_dir=out,
    )
    failed = 0
    for name, passed, detail in checks:
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        failed += 0 if passed else 1
    return 0 if failed == 0 else 1


def run_theorem_checks(
    instance, n, k, n_seeds, epsilons, m_refine, seed0, out_dir=None
):
    """Convergence, reward-lift, and drift-bound checks against the oracle."""
    q = instance.exact_posterior()
    cfg_kwargs = dict(
        rollouts_per_particle=k, refinements_per_round=0, horizon=instance.horizon
    )
    results = []

    def final_tv(n_particles: int, seed: int, refiner=None, m: int = 0):
        cfg = engine.RunConfig(
            n_particles=n_particles,
            seed=seed,
            refinements_per_round=m,
            rollouts_per_particle=k,
            horizon=instance.horizon,
        )
        res = engine.run(
            cfg,
            instance.prior,
            instance.reward_model,
            refiner if m else None,
        )
        codes = np.array(
            [instance.encode(traj) for traj in res.final_trajectories()]
        )
        emp = instance.empirical_distribution(codes)
        return oracle.tv_distance(emp, q), res

    small, large = max(10, n // 10), n
    tv_small = np.mean([final_tv(small, seed0 + s)[0] for s in range(n_seeds)])
    tvs_large, rewards_mean, last_run = [], [], None
    for s in range(n_seeds):
        tv, res = final_tv(large, seed0 + s)
        tvs_large.append(tv)
        rewards_mean.append(
            np.mean([instance.reward_model.score(p.prefix) for p in res.final_population])
        )
        last_run = res
    tv_large = float(np.mean(tvs_large))
    results.append(
        (
            "theorem-1 convergence",
            tv_large < 0.05 and tv_large < tv_small,
            f"mean TV {tv_large:.4f} at N={large} (vs {tv_small:.4f} at N={small})",
        )
    )
    ep = instance.expected_prior_reward()
    eq = instance.expected_posterior_reward()
    lift_ok = (
        sum(1 for r in rewards_mean if r >= ep - 0.01) >= max(1, int(0.95 * n_seeds))
        and float(np.mean(rewards_mean)) >= eq - 0.03
    )
    results.append(
        (
            "theorem-1 reward lift",
            lift_ok,
            f"mean E[R] {np.mean(rewards_mean):.4f} vs prior {ep:.4f}, posterior {eq:.4f}",
        )
    )

    slack = _sampling_slack(q, large)
    for eps in epsilons:
        refiner = SyntheticEpsilonRefiner(
            float(eps), alphabet=instance.alphabet, horizon=instance.horizon
        )
        tv, _ = final_tv(large, seed0, refiner=refiner, m=m_refine)
        bound = (instance.horizon - 1) * float(eps) + slack
        results.append(
            (
                f"theorem-2 drift eps={eps}",
                tv <= bound,
                f"TV {tv:.4f} <= bound {bound:.4f}",
            )
        )

    if out_dir is not None and last_run is not None:
        engine.write_run_artifacts(last_run, out_dir)
    return results


def _sampling_slack(q: np.ndarray, n: int) -> float:
    # expected iid TV plus a 3-sigma bounded-differences band
    mean_bound = 0.5 * float(np.sum(np.sqrt(q * (1 - q) / n)))
    return mean_bound + 3.0 * (0.25 / n) ** 0.5


def cmd_metrics(args) -> int:
    answer_rows = {}
    for line in Path(args.answers).read_text().splitlines():
        if line.strip():
            doc = json.loads(line)
            answer_rows[str(doc["id"])] = [str(a) for a in doc["answers"]]
    gold = {}
    for line in Path(args.gold).read_text().splitlines():
        if line.strip():
            doc = json.loads(line)
            gold[str(doc["id"])] = str(doc["answer"])
    if set(answer_rows) != set(gold):
        raise ShapeMismatchError("answer ids and gold ids differ")
    ids = sorted(answer_rows)
    matrix = [answer_rows[i][: args.num_workflows] for i in ids]
    if any(len(row) < args.num_workflows for row in matrix):
        raise ShapeMismatchError(
            f"some examples have fewer than L={args.num_workflows} answers"
        )
    scorer = SCORERS[args.scorer]()
    metrics = scaling_metrics(matrix, [gold[i] for i in ids], scorer)
    payload = json.dumps(metrics.as_dict(), sort_keys=True)
    print(payload)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(payload + "\n")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "archive.jsonl").exists():
        raise ConfigError(f"{run_dir} does not look like a run directory")
    entries = [
        json.loads(line)
        for line in (run_dir / "archive.jsonl").read_text().splitlines()
        if line.strip()
    ]
    rounds = []
    rounds_path = run_dir / "rounds.jsonl"
    if rounds_path.exists():
        rounds = [
            json.loads(line)
            for line in rounds_path.read_text().splitlines()
            if line.strip()
        ]
    evaluations = None
    rewards_path = run_dir / "rewards.jsonl"
    if rewards_path.exists():
        evaluations = sum(1 for line in rewards_path.read_text().splitlines() if line.strip())
    best = max(entries, key=lambda e: e["reward"]) if entries else None
    print(
        json.dumps(
            {
                "archive_size": len(entries),
                "best_reward": None if best is None else best["reward"],
                "rounds": len(rounds),
                "reward_evaluations": evaluations,
                "mean_reward_by_round": [r.get("mean_reward") for r in rounds],
            },
            sort_keys=True,
        )
    )
    return 0


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowsmc",
        description="Posterior-sampling workflow search and its oracle checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    search = sub.add_parser("search", help="run a workflow search")
    search.add_argument("--config", required=True)
    search.add_argument("--seed", type=int, default=None)
    search.add_argument("--out", default=None)
    search.add_argument("--workers", type=int, default=None)
    search.set_defaults(fn=cmd_search)

    oracle_check = sub.add_parser(
        "oracle-check", help="run convergence/drift checks against the exact oracle"
    )
    oracle_check.add_argument("--config", required=True)
    oracle_check.add_argument("--seed", type=int, default=None)
    oracle_check.add_argument("--out", default=None)
    oracle_check.add_argument("--workers", type=int, default=None)
    oracle_check.set_defaults(fn=cmd_oracle_check)

    metrics = sub.add_parser("metrics", help="Best@L / Mean@L / Majority@L")
    metrics.add_argument("--answers", required=True)
    metrics.add_argument("--gold", required=True)
    metrics.add_argument("--num-workflows", "-L", type=int, required=True)
    metrics.add_argument("--scorer", choices=sorted(SCORERS), default="exact")
    metrics.add_argument("--out", default=None)
    metrics.set_defaults(fn=cmd_metrics)

    report = sub.add_parser("report", help="summarize a run directory")
    report.add_argument("run_dir")
    report.set_defaults(fn=cmd_report)
    return parser


def main(argv: "list[str] | None" = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InstanceTooLargeError, ShapeMismatchError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FlowSMCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
