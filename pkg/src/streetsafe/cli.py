"""Command-line pipeline: ingest -> encode -> rate -> label -> train-irl ->
solve-rl -> evaluate -> ablate -> attribute -> serve, plus synth-expert.

Each subcommand reads the file its predecessor wrote. A resolved-config
fingerprint stamps every artifact; re-running a stage whose outputs
already carry the same fingerprint is a no-op unless --force. All
randomness flows from named seeds, never the wall clock.

Exit codes: 0 success, 2 usage, 3 data validation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import ablation, irl, metrics, rating, reward, solver, synth
from .encoder import ACTION_NAMES, BinaryStateEncoder, N_STATES, action_index, all_state_bits
from .features import FEATURE_ORDER, ingest_manifest, load_class_map, load_feature_table, save_feature_table
from .validation import DataValidationError, NumericalError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_SUPPRESS = argparse.SUPPRESS


def _fingerprint(config: dict) -> str:
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def _resolve(args: argparse.Namespace, defaults: dict) -> tuple[dict, str]:
    """Merge defaults < config file < explicit flags; return (config, fingerprint)."""
    provided = {
        k: v
        for k, v in vars(args).items()
        if k not in ("func", "config", "force") and v is not None
    }
    from_file: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise DataValidationError(f"config file not found: {path}")
        from_file = json.loads(path.read_text(encoding="utf-8"))
        unknown = set(from_file) - set(defaults)
        if unknown:
            raise DataValidationError(
                f"{path}: unknown config keys {sorted(unknown)}"
            )
    merged = {**defaults, **from_file, **provided}
    return merged, _fingerprint(merged)


def _existing_fingerprint(path: Path) -> str | None:
    if not path.exists():
        return None
    try:
        with path.open(encoding="utf-8") as fh:
            first = fh.readline().strip()
    except OSError:
        return None
    if first.startswith("# fingerprint="):
        return first.split("=", 1)[1]
    if first.startswith("{"):
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return None
        return doc.get("fingerprint")
    return None


def _skip_if_fresh(outputs: list[Path], fingerprint: str, force: bool) -> bool:
    if force:
        return False
    stamps = [_existing_fingerprint(p) for p in outputs]
    if outputs and all(s == fingerprint for s in stamps):
        print(f"up to date (fingerprint {fingerprint}); use --force to re-run")
        return True
    return False


def _write_states(path: Path, image_ids, state_ids, fingerprint: str) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# fingerprint={fingerprint}\n")
        writer = csv.writer(fh)
        writer.writerow(("image_id", "state_id"))
        for image_id, state in zip(image_ids, state_ids):
            writer.writerow((image_id, int(state)))


def _read_states(path: Path) -> tuple[list[str], list[int]]:
    if not path.exists():
        raise DataValidationError(f"state file not found: {path}")
    ids: list[str] = []
    states: list[int] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(ln for ln in fh if not ln.startswith("#"))
        header = next(reader, None)
        if header != ["image_id", "state_id"]:
            raise DataValidationError(f"{path}: bad state file header")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ids.append(row[0])
                states.append(int(row[1]))
            except (IndexError, ValueError):
                raise DataValidationError(f"{path}: line {line_no}: malformed row") from None
    return ids, states


def _demos_from_args(config: dict) -> irl.DemonstrationSet:
    if config.get("demos"):
        return irl.DemonstrationSet.load(config["demos"])
    if config.get("states") and config.get("labels"):
        image_ids, state_ids = _read_states(Path(config["states"]))
        labels = rating.load_labels(config["labels"])
        missing = [i for i in image_ids if i not in labels.labels]
        if missing:
            raise DataValidationError(f"labels missing for images: {missing[:5]}")
        return irl.DemonstrationSet.from_labels(
            state_ids, [labels.labels[i] for i in image_ids]
        )
    raise DataValidationError("provide --demos, or --states together with --labels")


def _reward_table_from_args(config: dict) -> np.ndarray:
    if config.get("params"):
        return irl.reward_table(reward.load_params(config["params"]))
    if config.get("expert_config"):
        return reward.expert_reward_table(reward.ExpertRewardConfig.load(config["expert_config"]))
    raise DataValidationError("provide --params or --expert-config")


def cmd_ingest(args: argparse.Namespace) -> int:
    defaults = {
        "features": None,
        "manifest": None,
        "class_map": None,
        "skip_malformed": False,
        "out": "features.csv",
    }
    config, fingerprint = _resolve(args, defaults)
    out = Path(config["out"])
    if config["features"]:
        table = load_feature_table(config["features"], skip_malformed=config["skip_malformed"])
    elif config["manifest"]:
        if not config["class_map"]:
            raise DataValidationError("--manifest requires --class-map")
        table = ingest_manifest(config["manifest"], load_class_map(config["class_map"]))
    else:
        raise DataValidationError("provide --features or --manifest")
    save_feature_table(table, out)
    print(f"wrote {out} ({len(table)} rows, fingerprint {fingerprint})")
    return EXIT_OK


def cmd_encode(args: argparse.Namespace) -> int:
    defaults = {
        "features": None,
        "encoder": None,
        "polarity": None,
        "out": "states.csv",
        "encoder_out": "encoder.json",
    }
    config, fingerprint = _resolve(args, defaults)
    if not config["features"]:
        raise DataValidationError("--features is required")
    out = Path(config["out"])
    encoder_out = Path(config["encoder_out"])
    if _skip_if_fresh([out], fingerprint, args.force):
        return EXIT_OK
    table = load_feature_table(config["features"])
    if config["encoder"]:
        encoder = BinaryStateEncoder.load(config["encoder"])
    else:
        polarity = None
        if config["polarity"]:
            polarity = json.loads(Path(config["polarity"]).read_text(encoding="utf-8"))
        encoder = BinaryStateEncoder(polarity=polarity).fit(table)
        encoder.save(encoder_out)
    state_ids = encoder.state_ids(table)
    _write_states(out, table.image_ids, state_ids, fingerprint)
    print(f"wrote {out} ({len(table)} states, fingerprint {fingerprint})")
    return EXIT_OK


def cmd_rate(args: argparse.Namespace) -> int:
    defaults = {
        "log": None,
        "out": "ratings.csv",
        "mu0": 25.0,
        "sigma0": 25.0 / 3.0,
        "beta": 25.0 / 6.0,
        "tau": 25.0 / 300.0,
    }
    config, fingerprint = _resolve(args, defaults)
    if not config["log"]:
        raise DataValidationError("--log is required")
    params = rating.TrueSkillParams(
        mu0=float(config["mu0"]),
        sigma0=float(config["sigma0"]),
        beta=float(config["beta"]),
        tau=float(config["tau"]),
    )
    table = rating.replay_log(rating.load_comparison_log(config["log"]), params)
    out = Path(config["out"])
    with out.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# fingerprint={fingerprint}\n")
        writer = csv.writer(fh)
        writer.writerow(("image_id", "mu", "sigma", "games"))
        for image_id in sorted(table.ratings):
            r = table.ratings[image_id]
            writer.writerow((image_id, repr(r.mu), repr(r.sigma), r.games))
    print(f"wrote {out} ({len(table.ratings)} ratings, fingerprint {fingerprint})")
    return EXIT_OK


def cmd_label(args: argparse.Namespace) -> int:
    defaults = {
        "log": None,
        "overrides": None,
        "out": "labels.csv",
        "mu0": 25.0,
        "sigma0": 25.0 / 3.0,
        "beta": 25.0 / 6.0,
        "tau": 25.0 / 300.0,
    }
    config, fingerprint = _resolve(args, defaults)
    if not config["log"]:
        raise DataValidationError("--log is required")
    params = rating.TrueSkillParams(
        mu0=float(config["mu0"]),
        sigma0=float(config["sigma0"]),
        beta=float(config["beta"]),
        tau=float(config["tau"]),
    )
    table = rating.replay_log(rating.load_comparison_log(config["log"]), params)
    scores = rating.normalize_scores(table)
    overrides = None
    if config["overrides"]:
        overrides = json.loads(Path(config["overrides"]).read_text(encoding="utf-8"))
    labels = rating.derive_labels(scores, overrides)
    out = Path(config["out"])
    rating.save_labels(labels, out, fingerprint=fingerprint)
    print(f"wrote {out} ({len(labels.labels)} labels, fingerprint {fingerprint})")
    return EXIT_OK


def cmd_train_irl(args: argparse.Namespace) -> int:
    defaults = {
        "demos": None,
        "states": None,
        "labels": None,
        "out": "reward_params.json",
        "history": "train_history.csv",
        "seed": 0,
        "learning_rate": 1e-3,
        "max_epochs": 5000,
        "tol": 1e-6,
        "optimizer": "adam",
    }
    config, fingerprint = _resolve(args, defaults)
    out = Path(config["out"])
    history_out = Path(config["history"])
    if _skip_if_fresh([out], fingerprint, args.force):
        return EXIT_OK
    demos = _demos_from_args(config)
    learner = irl.MaxEntIrl(
        learning_rate=float(config["learning_rate"]),
        max_epochs=int(config["max_epochs"]),
        tol=float(config["tol"]),
        seed=int(config["seed"]),
        optimizer=config["optimizer"],
    )
    learner.fit(demos)
    reward.save_params(
        learner.params_,
        out,
        seed=int(config["seed"]),
        optimizer=learner._optimizer_config,
        fingerprint=fingerprint,
    )
    irl.save_history(learner.history_, history_out, fingerprint=fingerprint)
    final = learner.history_[-1]
    print(
        f"wrote {out} (epochs {learner.n_epochs_}, log-likelihood {final.log_likelihood:.6f}, "
        f"agreement {final.agreement:.3f}, fingerprint {fingerprint})"
    )
    return EXIT_OK


def cmd_solve_rl(args: argparse.Namespace) -> int:
    defaults = {
        "params": None,
        "expert_config": None,
        "demos": None,
        "solver": "d3qn",
        "sampling": "empirical",
        "episodes": 20000,
        "rl_seed": 0,
        "learning_rate": 2e-3,
        "out": "policy.csv",
        "trace": None,
    }
    config, fingerprint = _resolve(args, defaults)
    out = Path(config["out"])
    if _skip_if_fresh([out], fingerprint, args.force):
        return EXIT_OK
    rewards = _reward_table_from_args(config)
    if config["solver"] == "exact":
        policy = solver.exact_policy(rewards)
        q_table = rewards
        trace = []
    elif config["solver"] == "d3qn":
        probs = None
        if config["sampling"] == "empirical":
            if not config["demos"]:
                raise DataValidationError("empirical sampling requires --demos")
            demos = irl.DemonstrationSet.load(config["demos"])
            probs = demos.state_counts / len(demos)
        env = solver.SingleStepEnv(rewards, state_probs=probs, seed=int(config["rl_seed"]))
        result = solver.d3qn_train(
            env,
            solver.D3qnConfig(
                episodes=int(config["episodes"]),
                learning_rate=float(config["learning_rate"]),
                seed=int(config["rl_seed"]),
            ),
        )
        policy, q_table, trace = result.policy, result.q_table, result.trace
    else:
        raise DataValidationError(f"unknown solver {config['solver']!r}")
    solver.save_policy(policy, q_table, out, fingerprint=fingerprint)
    if config["trace"] and trace:
        solver.save_trace(trace, Path(config["trace"]), fingerprint=fingerprint)
    agreement = float((policy == solver.exact_policy(rewards)).mean())
    print(f"wrote {out} (agreement with exact {agreement:.3f}, fingerprint {fingerprint})")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    defaults = {
        "params": None,
        "expert_config": None,
        "demos": None,
        "states": None,
        "labels": None,
        "solver": "exact",
        "out": "metrics.csv",
    }
    config, fingerprint = _resolve(args, defaults)
    demos = _demos_from_args(config)
    rewards = _reward_table_from_args(config)
    policy = solver.exact_policy(rewards)
    unsafe_scores = irl.softmax_rows(rewards)[:, 1]
    report = metrics.evaluate_policy(policy, unsafe_scores, demos, fingerprint=fingerprint)
    out = Path(config["out"])
    metrics.save_metrics_rows([("full", report)], out)
    print(
        f"wrote {out} (f1 {report.f1:.3f}, auc {report.auc:.3f}, "
        f"accuracy {report.learned_behavior_accuracy:.3f}, fingerprint {fingerprint})"
    )
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    defaults = {
        "demos": None,
        "out": "ablation.csv",
        "seed": 0,
        "solver": "exact",
        "max_epochs": 2000,
        "learning_rate": 1e-3,
        "episodes": 20000,
    }
    config, fingerprint = _resolve(args, defaults)
    if not config["demos"]:
        raise DataValidationError("--demos is required")
    demos = irl.DemonstrationSet.load(config["demos"])
    pipeline = ablation.PipelineConfig(
        irl=irl.MaxEntIrl(
            seed=int(config["seed"]),
            max_epochs=int(config["max_epochs"]),
            learning_rate=float(config["learning_rate"]),
        ),
        solver=config["solver"],
        d3qn=solver.D3qnConfig(episodes=int(config["episodes"]), seed=int(config["seed"])),
        fingerprint=fingerprint,
    )
    report = ablation.ablation_report(demos, pipeline)
    out = Path(config["out"])
    metrics.save_metrics_rows(report.rows(), out)
    print(
        f"wrote {out} (largest accuracy drop: {report.largest_accuracy_drop()}, "
        f"fingerprint {fingerprint})"
    )
    return EXIT_OK


def cmd_attribute(args: argparse.Namespace) -> int:
    defaults = {
        "params": None,
        "expert_config": None,
        "state_id": None,
        "action": "safe",
        "out": None,
    }
    config, fingerprint = _resolve(args, defaults)
    if config["state_id"] is None:
        raise DataValidationError("--state-id is required")
    state = int(config["state_id"])
    action = action_index(config["action"])
    sources: list[tuple[str, dict[str, float]]] = []
    if config["params"]:
        table = irl.reward_table(reward.load_params(config["params"]))
        sources.append(("recovered", ablation.attribute(table, state, action)))
    if config["expert_config"]:
        table = reward.expert_reward_table(reward.ExpertRewardConfig.load(config["expert_config"]))
        sources.append(("expert", ablation.attribute(table, state, action)))
    if not sources:
        raise DataValidationError("provide --params and/or --expert-config")
    lines = [("feature",) + tuple(name for name, _ in sources)]
    for feature in FEATURE_ORDER:
        lines.append(
            (feature,) + tuple(repr(contrib[feature]) for _, contrib in sources)
        )
    if config["out"]:
        with Path(config["out"]).open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"# fingerprint={fingerprint}\n")
            csv.writer(fh).writerows(lines)
        print(f"wrote {config['out']} (fingerprint {fingerprint})")
    else:
        for row in lines:
            print(",".join(str(c) for c in row))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    defaults = {
        "images": None,
        "log": "comparisons.tsv",
        "host": "127.0.0.1",
        "port": 8000,
        "pairing": "balanced",
        "token_ttl": 1800.0,
        "static": None,
    }
    config, _ = _resolve(args, defaults)
    if not config["images"]:
        raise DataValidationError("--images is required")
    from .service import AnnotationService, create_app

    service = AnnotationService(
        image_dir=config["images"],
        log_path=config["log"],
        pairing=config["pairing"],
        token_ttl=float(config["token_ttl"]),
    )
    app = create_app(service, static_dir=config["static"])
    import uvicorn

    uvicorn.run(app, host=config["host"], port=int(config["port"]), log_level="warning")
    return EXIT_OK


def cmd_synth_expert(args: argparse.Namespace) -> int:
    defaults = {
        "states": N_STATES,
        "demos": 5000,
        "seed": 7,
        "sharpness": 4.0,
        "kind": "net",
        "boost_feature": None,
        "boost_factor": 3.0,
        "base_weight": 1.0,
        "consistency_bonus": 0.5,
        "out_dir": "synth",
    }
    config, fingerprint = _resolve(args, defaults)
    out_dir = Path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    demos_path = out_dir / "demos.csv"
    seed = int(config["seed"])
    if config["kind"] == "net":
        truth_path = out_dir / "truth_params.json"
        params = synth.synth_reward_net(seed, sharpness=float(config["sharpness"]))
        rewards = irl.reward_table(params)
        reward.save_params(params, truth_path, seed=seed, fingerprint=fingerprint)
    elif config["kind"] == "linear":
        truth_path = out_dir / "truth_expert.json"
        weights = [float(config["base_weight"])] * len(FEATURE_ORDER)
        if config["boost_feature"]:
            if config["boost_feature"] not in FEATURE_ORDER:
                raise DataValidationError(f"unknown feature {config['boost_feature']!r}")
            idx = FEATURE_ORDER.index(config["boost_feature"])
            weights[idx] *= float(config["boost_factor"])
        expert = reward.ExpertRewardConfig(
            weights=tuple(weights),
            consistency_bonus=float(config["consistency_bonus"]),
        )
        rewards = reward.expert_reward_table(expert)
        expert.save(truth_path)
    else:
        raise DataValidationError(f"unknown synth kind {config['kind']!r}")
    demos = synth.sample_demos_softmax(
        rewards, int(config["demos"]), seed=seed, n_states=int(config["states"])
    )
    demos.save(demos_path)
    print(
        f"wrote {truth_path} and {demos_path} "
        f"({len(demos)} demonstrations, fingerprint {fingerprint})"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streetsafe",
        description="Street-view safety perception pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file; explicit flags win")
        p.add_argument("--force", action="store_true", help="re-run even if outputs are fresh")
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "validate/compute the canonical feature table")
    p.add_argument("--features", help="feature CSV to validate and normalize")
    p.add_argument("--manifest", help="manifest of segmentation maps and histograms")
    p.add_argument("--class-map", dest="class_map", help="feature -> class ids JSON")
    p.add_argument("--skip-malformed", dest="skip_malformed", action="store_const", const=True)
    p.add_argument("--out")

    p = add("encode", cmd_encode, "fit thresholds and encode features into state ids")
    p.add_argument("--features")
    p.add_argument("--encoder", help="reuse a saved encoder config instead of fitting")
    p.add_argument("--polarity", help="JSON file of per-feature polarity overrides")
    p.add_argument("--out")
    p.add_argument("--encoder-out", dest="encoder_out")

    p = add("rate", cmd_rate, "replay a comparison log into skill ratings")
    p.add_argument("--log")
    p.add_argument("--out")
    p.add_argument("--mu0", type=float)
    p.add_argument("--sigma0", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tau", type=float)

    p = add("label", cmd_label, "derive binary safety labels from a comparison log")
    p.add_argument("--log")
    p.add_argument("--overrides", help="JSON of expert label overrides")
    p.add_argument("--out")
    p.add_argument("--mu0", type=float)
    p.add_argument("--sigma0", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tau", type=float)

    p = add("train-irl", cmd_train_irl, "recover the reward network from demonstrations")
    p.add_argument("--demos")
    p.add_argument("--states")
    p.add_argument("--labels")
    p.add_argument("--out")
    p.add_argument("--history")
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))

    p = add("solve-rl", cmd_solve_rl, "solve the one-step MDP under a reward")
    p.add_argument("--params")
    p.add_argument("--expert-config", dest="expert_config")
    p.add_argument("--demos", help="for empirical start-state sampling")
    p.add_argument("--solver", choices=("exact", "d3qn"))
    p.add_argument("--sampling", choices=("empirical", "uniform"))
    p.add_argument("--episodes", type=int)
    p.add_argument("--rl-seed", dest="rl_seed", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--out")
    p.add_argument("--trace")

    p = add("evaluate", cmd_evaluate, "score a reward source against demonstrations")
    p.add_argument("--params")
    p.add_argument("--expert-config", dest="expert_config")
    p.add_argument("--demos")
    p.add_argument("--states")
    p.add_argument("--labels")
    p.add_argument("--out")

    p = add("ablate", cmd_ablate, "re-run the pipeline with each feature zeroed")
    p.add_argument("--demos")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--solver", choices=("exact", "d3qn"))
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--episodes", type=int)

    p = add("attribute", cmd_attribute, "per-feature reward contributions for one state")
    p.add_argument("--params")
    p.add_argument("--expert-config", dest="expert_config")
    p.add_argument("--state-id", dest="state_id", type=int)
    p.add_argument("--action", choices=ACTION_NAMES)
    p.add_argument("--out")

    p = add("serve", cmd_serve, "run the pairwise annotation service")
    p.add_argument("--images")
    p.add_argument("--log")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--pairing", choices=("balanced", "uniform"))
    p.add_argument("--token-ttl", dest="token_ttl", type=float)
    p.add_argument("--static", help="serve these files at / (e.g. the web UI build)")

    p = add("synth-expert", cmd_synth_expert, "generate a ground-truth reward and demos")
    p.add_argument("--states", type=int)
    p.add_argument("--demos", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sharpness", type=float)
    p.add_argument("--kind", choices=("net", "linear"))
    p.add_argument("--boost-feature", dest="boost_feature")
    p.add_argument("--boost-factor", dest="boost_factor", type=float)
    p.add_argument("--base-weight", dest="base_weight", type=float)
    p.add_argument("--consistency-bonus", dest="consistency_bonus", type=float)
    p.add_argument("--out-dir", dest="out_dir")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
