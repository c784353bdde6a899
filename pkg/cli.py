#!/usr/bin/env python3
"""
Experiment runner.

    python cli.py train      --config configs/cartpole.yaml --seed 0 1 2 3 4 [--plot]
    python cli.py eval       --config configs/cartpole.yaml --seed 0
    python cli.py gradcheck  --seed 0 [--suite parameter-shift ...] [--inject-shift 0.785]
    python cli.py dlp-verify --config configs/dlp_verify.yaml --seed 0
    python cli.py gen-env    --config configs/sl_pqc.yaml --seed 0 [--plot]

Exit codes: 0 success, 1 configuration error, 2 check failure, 3 numerical abort.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np

from dlp import DeterministicDlpLearner, DlpAgentPolicy, sample_training_set, train_classifier, write_instances
from envs import DeterministicDlpEnv, Environment, make_environment
from experiment_config import (
    EnvironmentFamily,
    ExperimentConfig,
    dump_config,
    load_config,
    validate_config,
)
from pqc import (
    Entangler,
    GradientMode,
    PolicyConfig,
    PolicyKind,
    PqcPolicy,
    PqcTopology,
    observable_preset,
    observables_from_labels,
    partition_preset,
)
from qrl_errors import (
    EXIT_CHECK_FAILED,
    EXIT_OK,
    CheckFailedError,
    ConfigurationError,
    NumericalBlowupError,
    exit_code_for,
)
from run_records import (
    RunRow,
    abort_path,
    load_metadata,
    load_parameters,
    params_path,
    plot_labeling_function,
    plot_learning_curves,
    run_path,
    save_parameters,
    timing_path,
    write_aggregate,
    write_eval_records,
    write_run_records,
    write_table,
    write_timing_records,
)
from train import MlpPolicy, ReinforceTrainer, UniformPolicy, evaluate_policy
from verification import GRADCHECK_SUITES, VerificationReport, run_dlp_verify, run_gradcheck

logger = logging.getLogger(__name__)


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors become configuration errors (exit code 1)"""

    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


# --- builders -----------------------------------------------------------------

def build_environment(config: ExperimentConfig, seed: int) -> Environment:
    return make_environment(config.environment.id, config.environment.params, seed)


def _pqc_policy(config: ExperimentConfig, env: Environment, rng: np.random.Generator) -> PqcPolicy:
    preset = config.preset
    section = config.policy
    trainer = config.resolved_trainer()
    if section.n_qubits is not None:
        n_qubits = section.n_qubits
    elif preset.qubits_follow_observation:
        n_qubits = env.observation_dim
    else:
        n_qubits = preset.n_qubits
    d_enc = section.d_enc if section.d_enc is not None else preset.d_enc
    topology = PqcTopology(n_qubits, d_enc, env.observation_dim, Entangler(section.entangler or preset.entangler),
                           section.entangler_trainable)
    if config.policy_kind() == "raw":
        partition = partition_preset(section.partition or preset.partition, n_qubits, env.n_actions)
        policy_config = PolicyConfig(PolicyKind.RAW, partition=partition)
    else:
        observables = section.observables or preset.observables
        if isinstance(observables, str):
            specs = observable_preset(observables, n_qubits, env.n_actions)
        else:
            specs = observables_from_labels(observables, n_qubits, env.n_actions)
        policy_config = PolicyConfig(PolicyKind.SOFTMAX, beta=section.beta, observables=specs)
    input_scale = env.observation_scale if section.input_scaling else None
    return PqcPolicy.initialize(topology, policy_config, rng, section.lam_init, section.w_init,
                                gradient_mode=GradientMode(trainer.gradient_mode), shots=trainer.shots,
                                input_scale=input_scale)


def _dlp_agent(config: ExperimentConfig, env: Environment, rng: np.random.Generator):
    section = config.policy
    instance = env.instance
    if isinstance(env, DeterministicDlpEnv):
        return DeterministicDlpLearner(instance.p, instance.g, section.dlp_k, section.dlp_shots, config.dlp.noise,
                                       seed=int(rng.integers(2 ** 31)))
    if section.dlp_oracle:
        s_prime = instance.s
    else:
        xs = sample_training_set(instance, config.dlp.training_size, rng)
        s_prime = train_classifier(instance, xs, section.dlp_k, section.dlp_shots, rng, config.dlp.noise)
        logger.info(f"Trained s' = {s_prime} (secret s = {instance.s}) on {xs.size} samples")
    return DlpAgentPolicy(instance, s_prime, section.dlp_k, section.dlp_shots, section.dlp_votes, config.dlp.noise)


def build_policy(config: ExperimentConfig, env: Environment, rng: np.random.Generator):
    kind = config.policy_kind()
    if kind == "uniform":
        return UniformPolicy(env.n_actions)
    if kind == "mlp":
        widths = [env.observation_dim, *config.policy.mlp_hidden, env.n_actions]
        return MlpPolicy(widths, rng, env.observation_scale if config.policy.input_scaling else None)
    if kind == "dlp-agent":
        return _dlp_agent(config, env, rng)
    return _pqc_policy(config, env, rng)


def _init_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


def _sequential(env: Environment) -> bool:
    return isinstance(env, DeterministicDlpEnv)


# --- subcommands --------------------------------------------------------------

def _dump_abort(output_dir: str, seed: int, trainer: ReinforceTrainer, error: Exception) -> str:
    path = abort_path(output_dir, seed)
    metadata = {"error": str(error), **{k: v for k, v in trainer.last_batch.items()}}
    save_parameters(path, trainer.policy.parameter_groups(), metadata)
    return path


def run_train(config: ExperimentConfig, seeds: Sequence[int], plot: bool = False) -> str:
    """One run CSV, timing CSV and parameter dump per seed, then the aggregate CSV"""
    trainer_config = config.resolved_trainer()
    output_dir = config.get_output_dir()
    os.makedirs(output_dir, exist_ok=True)
    dump_config(config, os.path.join(output_dir, "config.yaml"))
    print(f"[INFO] Training {config.policy_kind()} policy on {config.environment.id}, "
          f"{trainer_config.episodes} episodes x {len(seeds)} seed(s) -> {output_dir}")

    for seed in seeds:
        env = build_environment(config, seed)
        policy = build_policy(config, env, _init_rng(seed))
        if not hasattr(policy, "log_policy_gradients"):
            raise ConfigurationError(f"Policy kind '{config.policy_kind()}' has no trainable parameters; use eval")
        trainer = ReinforceTrainer(policy, env, trainer_config, seed)
        try:
            metrics = trainer.train()
        except NumericalBlowupError as e:
            path = _dump_abort(output_dir, seed, trainer, e)
            logger.error(f"seed {seed}: numerical abort, state dumped to {path}")
            raise
        rows = [RunRow(seed, m.episode, m.total_reward, m.moving_average, m.beta) for m in metrics]
        write_run_records(run_path(output_dir, seed), rows)
        write_timing_records(timing_path(output_dir, seed), seed, [m.episode for m in metrics],
                             [m.wall_ms for m in metrics])
        save_parameters(params_path(output_dir, seed), policy.parameter_groups(),
                        {"policy": config.policy_kind(), "environment": config.environment.id,
                         "beta": getattr(policy, "beta", 1.0)})
        print(f"[OK] seed {seed}: final moving average {rows[-1].moving_average:.2f}, "
              f"excluded episodes {trainer.excluded_episodes}")

    run_files = [run_path(output_dir, s) for s in seeds]
    write_aggregate(os.path.join(output_dir, "aggregate.csv"), run_files)
    if plot:
        print(f"[OK] Plot: {plot_learning_curves(output_dir, run_files, config.preset.name)}")
    return output_dir


def run_eval(config: ExperimentConfig, seeds: Sequence[int]) -> str:
    """Monte Carlo evaluation; trained parameters are loaded when the run has them"""
    trainer_config = config.resolved_trainer()
    output_dir = config.get_output_dir()
    for seed in seeds:
        env = build_environment(config, seed)
        policy = build_policy(config, env, _init_rng(seed))
        stored = params_path(output_dir, seed)
        if hasattr(policy, "set_parameter_groups"):
            if os.path.exists(stored):
                policy.set_parameter_groups(load_parameters(stored))
                meta = load_metadata(stored)
                if hasattr(policy, "beta") and "beta" in meta:
                    policy.beta = float(meta["beta"])
                logger.info(f"Loaded parameters from {stored}")
            else:
                logger.warning(f"No parameters at {stored}; evaluating the initial policy")
        result = evaluate_policy(policy, env, config.run.eval_episodes, np.random.default_rng([seed, 2]),
                                 gamma=trainer_config.gamma, greedy=config.run.greedy_eval,
                                 horizon=trainer_config.horizon, sequential=_sequential(env))
        write_eval_records(os.path.join(output_dir, f"eval_seed{seed}.csv"), seed, result.returns, result.values,
                           result.lengths)
        print(f"[OK] seed {seed}: mean return {result.mean_return:.3f}, "
              f"value {result.mean_value:.4f} +- {result.value_stderr:.4f} over {result.returns.size} episodes")
    return output_dir


def _finish_report(report: VerificationReport, path: Optional[str]) -> VerificationReport:
    for check in report.checks:
        tag = "[OK]" if check.passed else "[FAIL]"
        print(f"{tag} {check.suite}: {check.name} (value {check.value}, tolerance {check.tolerance})")
    if path:
        report.write_json(path)
        print(f"[INFO] Report written to {path}")
    return report


def _report_path(args, config: ExperimentConfig, command: str, seed: int) -> Optional[str]:
    if args.report:
        return args.report if len(args.seed) == 1 else f"{os.path.splitext(args.report)[0]}_seed{seed}.json"
    return os.path.join(config.get_output_dir(), f"{command}_seed{seed}.json")


def run_gen_env(config: ExperimentConfig, seed: int, plot: bool = False) -> List[str]:
    """Write the generated dataset (PQC families) or the drawn instance (DLP families)"""
    preset = config.preset
    output_dir = config.get_output_dir()
    os.makedirs(output_dir, exist_ok=True)
    env = build_environment(config, seed)
    written = []
    if preset.family == EnvironmentFamily.PQC_GENERATED:
        spec = env.spec
        order = np.argsort(spec.path)
        values = spec.label_values(spec.points)
        path = os.path.join(output_dir, f"dataset_seed{seed}.csv")
        write_table(path, ("index", "s0", "s1", "label", "zz_value", "path_position"),
                    ((i, repr(float(x[0])), repr(float(x[1])), int(y), repr(float(v)), int(order[i]))
                     for i, (x, y, v) in enumerate(zip(spec.points, spec.labels, values))))
        written.append(path)
        generator = os.path.join(output_dir, f"generator_seed{seed}.npz")
        save_parameters(generator, spec.generator_params.groups(), {"seed": spec.seed, "margin": spec.margin})
        written.append(generator)
        if plot:
            grid = np.linspace(0.0, 2 * np.pi, 60)
            mesh = np.stack(np.meshgrid(grid, grid), axis=-1).reshape(-1, 2)
            surface = spec.label_values(mesh).reshape(len(grid), len(grid))
            written.append(plot_labeling_function(os.path.join(output_dir, f"labeling_seed{seed}.svg"), grid,
                                                  surface, spec.points, spec.labels))
    elif preset.family == EnvironmentFamily.DLP:
        path = os.path.join(output_dir, f"instances_seed{seed}.txt")
        write_instances(path, [(env.instance, seed)])
        written.append(path)
        if isinstance(env, DeterministicDlpEnv):
            chain = os.path.join(output_dir, f"chain_seed{seed}.csv")
            states = list(env.training_states) + [env.test_state]
            tags = ["train"] * env.chain_length + ["test"]
            write_table(chain, ("position", "x", "role"), ((i, int(x), t) for i, (x, t) in enumerate(zip(states, tags))))
            written.append(chain)
    else:
        raise ConfigurationError(f"gen-env applies to generated environments, not '{preset.id}'")
    for path in written:
        print(f"[OK] {path}")
    return written


def _load(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    run = config.run
    if getattr(args, "output", None):
        run = replace(run, output_dir=args.output)
    if getattr(args, "name", None):
        run = replace(run, name=args.name)
    trainer = config.trainer
    if getattr(args, "episodes", None) is not None:
        if args.command == "eval":
            run = replace(run, eval_episodes=args.episodes)
        else:
            trainer = replace(trainer, episodes=args.episodes)
    if getattr(args, "parallelism", None) is not None:
        trainer = replace(trainer, parallelism=args.parallelism)
    config = replace(config, run=replace(run, seeds=list(args.seed)), trainer=trainer)
    validate_config(config)
    return config


def _cmd_train(args) -> int:
    run_train(_load(args), args.seed, plot=args.plot)
    return EXIT_OK


def _cmd_eval(args) -> int:
    run_eval(_load(args), args.seed)
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    config = _load(args)
    failed = False
    for seed in args.seed:
        report = run_gradcheck(seed, args.suite, args.inject_shift, args.circuits)
        _finish_report(report, _report_path(args, config, "gradcheck", seed))
        failed = failed or not report.passed
    if failed:
        raise CheckFailedError("gradcheck reported failing checks")
    return EXIT_OK


def _cmd_dlp_verify(args) -> int:
    config = _load(args)
    failed = False
    for seed in args.seed:
        report = run_dlp_verify(config.dlp, seed, include_theorem=not args.skip_theorem)
        _finish_report(report, _report_path(args, config, "dlp_verify", seed))
        failed = failed or not report.passed
    if failed:
        raise CheckFailedError("dlp-verify reported failing checks")
    return EXIT_OK


def _cmd_gen_env(args) -> int:
    config = _load(args)
    for seed in args.seed:
        run_gen_env(config, seed, plot=args.plot)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="cli.py", description="Quantum-policy RL lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_config: bool) -> None:
        p.add_argument("--config", required=needs_config, help="YAML experiment file")
        p.add_argument("--seed", type=int, nargs="+", required=True, help="one or more seeds")
        p.add_argument("--output", help="output directory (overridden by QRL_OUTPUT_ROOT)")
        p.add_argument("--name", help="run name inside the output directory")
        p.add_argument("--verbose", action="store_true", help="DEBUG logging")

    train = sub.add_parser("train", help="REINFORCE training, one CSV per seed")
    common(train, True)
    train.add_argument("--episodes", type=int)
    train.add_argument("--parallelism", type=int)
    train.add_argument("--plot", action="store_true", help="write learning_curves.svg")
    train.set_defaults(handler=_cmd_train)

    evaluate = sub.add_parser("eval", help="Monte Carlo evaluation of a trained or fixed policy")
    common(evaluate, True)
    evaluate.add_argument("--episodes", type=int)
    evaluate.set_defaults(handler=_cmd_eval)

    gradcheck = sub.add_parser("gradcheck", help="gradient correctness suites")
    common(gradcheck, False)
    gradcheck.add_argument("--suite", nargs="*", choices=list(GRADCHECK_SUITES),
                           help="suites to run (default: all)")
    gradcheck.add_argument("--inject-shift", type=float, help="debug: replace the pi/2 shift")
    gradcheck.add_argument("--circuits", type=int, default=100)
    gradcheck.add_argument("--report", help="JSON report path")
    gradcheck.set_defaults(handler=_cmd_gradcheck)

    dlp_verify = sub.add_parser("dlp-verify", help="DLP oracle, accuracy and bound checks")
    common(dlp_verify, False)
    dlp_verify.add_argument("--skip-theorem", action="store_true", help="skip the trained-accuracy table")
    dlp_verify.add_argument("--report", help="JSON report path")
    dlp_verify.set_defaults(handler=_cmd_dlp_verify)

    gen_env = sub.add_parser("gen-env", help="materialise a generated environment")
    common(gen_env, True)
    gen_env.add_argument("--plot", action="store_true", help="write the labeling function as SVG")
    gen_env.set_defaults(handler=_cmd_gen_env)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    arguments = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.DEBUG if "--verbose" in arguments else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(arguments)
        return args.handler(args)
    except CheckFailedError as e:
        print(f"[FAIL] {e}")
        return EXIT_CHECK_FAILED
    except Exception as e:
        code = exit_code_for(e)
        print(f"[ERROR] {type(e).__name__}: {e}")
        if code != 1:
            logger.exception("Aborted")
        return code


if __name__ == "__main__":
    sys.exit(main())
