"""
Experiment configuration for the quantum-policy RL lab.
YAML files with sections environment, policy, trainer, dlp and run; a preset
registry supplies per-environment defaults so files only state overrides.
"""

import logging
import os
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv

from qrl_errors import ConfigurationError

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "QRL_OUTPUT_ROOT"


class EnvironmentFamily(Enum):
    """Where an environment comes from"""
    CLASSIC = "classic"
    DISCRETE = "discrete"
    PQC_GENERATED = "pqc-generated"
    DLP = "dlp"


@dataclass
class EnvironmentPreset:
    """Defaults for one environment id"""
    id: str
    name: str
    description: str
    family: EnvironmentFamily
    policy_kind: str
    n_qubits: Optional[int] = None
    d_enc: Optional[int] = None
    observables: Optional[str] = None
    partition: Optional[str] = None
    entangler: str = "one-to-one"
    gamma: float = 1.0
    baseline: bool = False
    batch_size: int = 10
    lr_phi: float = 0.01
    lr_w: float = 0.1
    lr_lam: float = 0.1
    beta_final: Optional[float] = None
    allowed_params: Tuple[str, ...] = ()
    qubits_follow_observation: bool = False


_DLP_PARAMS = ("p", "g", "s")


class EnvironmentRegistry:
    """Registry of available environments and their defaults"""

    PRESETS = {
        "cartpole": EnvironmentPreset(
            id="cartpole",
            name="CartPole-v1",
            description="Pole balancing, +1 per step, 500-step horizon",
            family=EnvironmentFamily.CLASSIC,
            policy_kind="softmax",
            n_qubits=4, d_enc=5,
            observables="z-product-sign", partition="contiguous",
            gamma=1.0, baseline=False, lr_lam=0.01, beta_final=1.0,
            allowed_params=("horizon", "constants"),
        ),
        "mountaincar": EnvironmentPreset(
            id="mountaincar",
            name="MountainCar-v0 (shaped)",
            description="Hill climb, -1 per step plus height shaping and goal bonus, 200-step horizon",
            family=EnvironmentFamily.CLASSIC,
            policy_kind="softmax",
            n_qubits=2, d_enc=4,
            observables="z0-z0z1-z1", partition="contiguous",
            gamma=1.0, baseline=True, beta_final=1.0,
            allowed_params=("horizon", "constants"),
        ),
        "acrobot": EnvironmentPreset(
            id="acrobot",
            name="Acrobot-v1",
            description="Two-link swing-up, -1 per step, 500-step horizon",
            family=EnvironmentFamily.CLASSIC,
            policy_kind="softmax",
            n_qubits=3, d_enc=2,
            observables="z0-z0z1-z1", partition="contiguous",
            gamma=1.0, baseline=True, beta_final=1.0,
            allowed_params=("horizon", "constants"),
        ),
        "cognitive-radio": EnvironmentPreset(
            id="cognitive-radio",
            name="CognitiveRadio",
            description="Pick a free radio channel among n, +-1 reward, 100 steps",
            family=EnvironmentFamily.DISCRETE,
            policy_kind="softmax",
            d_enc=2,
            observables="z-per-action", partition="contiguous",
            gamma=0.9,
            allowed_params=("n_channels", "period", "horizon"),
            qubits_follow_observation=True,
        ),
        "sl-pqc": EnvironmentPreset(
            id="sl-pqc",
            name="SL-PQC",
            description="Label points of a random-PQC dataset, +-1 reward, 20 steps",
            family=EnvironmentFamily.PQC_GENERATED,
            policy_kind="softmax",
            n_qubits=2, d_enc=4,
            observables="zz-sign", partition="parity",
            gamma=1.0,
            allowed_params=("generator_seed", "margin", "per_label", "episode_len"),
        ),
        "cliffwalk-pqc": EnvironmentPreset(
            id="cliffwalk-pqc",
            name="Cliffwalk-PQC",
            description="Walk a random-PQC dataset; a wrong label ends the episode",
            family=EnvironmentFamily.PQC_GENERATED,
            policy_kind="softmax",
            n_qubits=2, d_enc=4,
            observables="zz-sign", partition="parity",
            gamma=0.9,
            allowed_params=("generator_seed", "margin", "per_label", "episode_len"),
        ),
        "sl-dlp": EnvironmentPreset(
            id="sl-dlp",
            name="SL-DLP",
            description="Classify uniform x in Z_p^* by the discrete-log concept",
            family=EnvironmentFamily.DLP,
            policy_kind="dlp-agent",
            allowed_params=_DLP_PARAMS + ("episode_len",),
        ),
        "cliffwalk-dlp": EnvironmentPreset(
            id="cliffwalk-dlp",
            name="Cliffwalk-DLP",
            description="Circular cliff over Z_p^* with slipping",
            family=EnvironmentFamily.DLP,
            policy_kind="dlp-agent",
            gamma=0.9,
            allowed_params=_DLP_PARAMS + ("slip_delta", "gamma", "horizon"),
        ),
        "deterministic-dlp": EnvironmentPreset(
            id="deterministic-dlp",
            name="Deterministic-DLP",
            description="Labeled training chain followed by one test state",
            family=EnvironmentFamily.DLP,
            policy_kind="dlp-agent",
            allowed_params=_DLP_PARAMS + ("chain_length", "persistent_memory"),
        ),
    }

    @classmethod
    def get_preset(cls, env_id: str) -> EnvironmentPreset:
        """Get preset by environment id"""
        preset = cls.PRESETS.get(env_id)
        if preset is None:
            raise ConfigurationError(f"Unknown environment '{env_id}', expected one of {sorted(cls.PRESETS)}")
        return preset

    @classmethod
    def get_all_presets(cls) -> Dict[str, EnvironmentPreset]:
        return cls.PRESETS.copy()

    @classmethod
    def get_family(cls, family: EnvironmentFamily) -> Dict[str, EnvironmentPreset]:
        return {k: v for k, v in cls.PRESETS.items() if v.family == family}

    @classmethod
    def add_custom_preset(cls, preset: EnvironmentPreset):
        cls.PRESETS[preset.id] = preset


# --- sections -----------------------------------------------------------------

@dataclass
class EnvironmentConfig:
    id: str = "cartpole"
    params: Dict[str, Any] = field(default_factory=dict)


POLICY_KINDS = ("softmax", "raw", "mlp", "uniform", "dlp-agent")


@dataclass
class PolicySection:
    """Unset fields fall back to the environment preset"""
    kind: Optional[str] = None
    n_qubits: Optional[int] = None
    d_enc: Optional[int] = None
    entangler: Optional[str] = None
    entangler_trainable: bool = False
    # preset name or one list of terms per action, e.g. [["Z0Z1"], ["-1*Z0Z1"]]
    observables: Optional[Union[str, List[List[str]]]] = None
    partition: Optional[str] = None
    beta: float = 1.0
    lam_init: float = 1.0
    w_init: float = 1.0
    input_scaling: bool = True
    mlp_hidden: List[int] = field(default_factory=lambda: [16, 16, 16, 16])
    dlp_k: int = 0
    dlp_shots: Optional[int] = None
    dlp_votes: int = 1
    dlp_oracle: bool = True


GRADIENT_MODES = ("exact", "parameter-shift", "shots")


@dataclass
class TrainerConfig:
    episodes: int = 1000
    batch_size: Optional[int] = None
    gamma: Optional[float] = None
    horizon: Optional[int] = None
    lr_phi: Optional[float] = None
    lr_w: Optional[float] = None
    lr_lam: Optional[float] = None
    lr_mlp: float = 0.01
    freeze: List[str] = field(default_factory=list)
    beta_final: Optional[float] = None
    anneal: bool = True
    baseline: Optional[bool] = None
    normalize_advantages: bool = False
    gradient_mode: str = "exact"
    shots: int = 1000
    parallelism: int = 1

    def learning_rates(self) -> Dict[str, float]:
        return {"phi": self.lr_phi, "w": self.lr_w, "lam": self.lr_lam}

    def with_preset(self, preset: EnvironmentPreset) -> "TrainerConfig":
        """Copy with every unset field taken from the preset"""
        values = asdict(self)
        for key in ("batch_size", "gamma", "lr_phi", "lr_w", "lr_lam", "baseline"):
            if values[key] is None:
                values[key] = getattr(preset, key)
        if values["beta_final"] is None and self.anneal:
            values["beta_final"] = preset.beta_final
        if not self.anneal:
            values["beta_final"] = None
        return TrainerConfig(**values)


@dataclass
class DlpSection:
    primes: List[int] = field(default_factory=lambda: [7, 11, 101])
    p: int = 101
    k: int = 4
    instances: int = 20
    training_size: int = 32
    shots: int = 1024
    noise: str = "binomial"
    theorem_p: int = 8191
    theorem_k: int = 4
    theorem_training_size: int = 64
    theorem_shots: int = 4096
    theorem_trials: int = 100
    theorem_accuracy: float = 0.95
    gammas: List[float] = field(default_factory=lambda: [0.0, 0.5, 0.9])
    bound_points: List[List[float]] = field(default_factory=lambda: [[0.51, 0.86, 0.9], [0.99, 0.5, 0.9]])
    monte_carlo_episodes: int = 100000
    agent_episodes: int = 4000


@dataclass
class RunSection:
    seeds: List[int] = field(default_factory=list)
    output_dir: str = "runs"
    name: Optional[str] = None
    plot: bool = False
    eval_episodes: int = 100
    greedy_eval: bool = False


@dataclass
class ExperimentConfig:
    """Complete configuration of one experiment"""
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    policy: PolicySection = field(default_factory=PolicySection)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    dlp: DlpSection = field(default_factory=DlpSection)
    run: RunSection = field(default_factory=RunSection)

    @property
    def preset(self) -> EnvironmentPreset:
        return EnvironmentRegistry.get_preset(self.environment.id)

    def policy_kind(self) -> str:
        return self.policy.kind or self.preset.policy_kind

    def resolved_trainer(self) -> TrainerConfig:
        return self.trainer.with_preset(self.preset)

    def get_run_name(self) -> str:
        """Directory name of the run"""
        return self.run.name or f"{self.environment.id}_{self.policy_kind()}"

    def get_output_dir(self) -> str:
        return os.path.join(output_root(self.run.output_dir), self.get_run_name())


_SECTIONS = {
    "environment": EnvironmentConfig,
    "policy": PolicySection,
    "trainer": TrainerConfig,
    "dlp": DlpSection,
    "run": RunSection,
}


def output_root(default: str) -> str:
    """QRL_OUTPUT_ROOT from .env or the process environment, else default"""
    load_dotenv()
    return os.environ.get(OUTPUT_ROOT_ENV) or default


def _section_from_dict(name: str, cls, data: Any):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigurationError(f"Section '{name}' must be a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in section '{name}': {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: Optional[Dict[str, Any]]) -> ExperimentConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigurationError("Configuration root must be a mapping")
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"Unknown section(s): {sorted(unknown)}")
    config = ExperimentConfig(**{name: _section_from_dict(name, cls, data.get(name))
                                 for name, cls in _SECTIONS.items()})
    validate_config(config)
    return config


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    return asdict(config)


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate a YAML experiment file"""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except FileNotFoundError as e:
        raise ConfigurationError(f"Config file not found: {path}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Config file {path} is not valid YAML: {e}") from e
    logger.info(f"Loaded configuration from {path}")
    return config_from_dict(data)


def dump_config(config: ExperimentConfig, path: Optional[str] = None) -> str:
    text = yaml.safe_dump(config_to_dict(config), sort_keys=False, default_flow_style=None)
    if path is not None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
    return text


def _positive_int(value: Any, name: str, minimum: int = 1) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigurationError(f"{name} must be an integer >= {minimum}, got {value!r}")


def validate_config(config: ExperimentConfig) -> None:
    """Check every field before anything is computed"""
    preset = config.preset
    unknown = set(config.environment.params) - set(preset.allowed_params)
    if unknown:
        raise ConfigurationError(
            f"Unknown parameter(s) for environment '{preset.id}': {sorted(unknown)}; allowed {list(preset.allowed_params)}")

    policy = config.policy
    kind = config.policy_kind()
    if kind not in POLICY_KINDS:
        raise ConfigurationError(f"policy.kind must be one of {POLICY_KINDS}, got '{kind}'")
    if kind in ("softmax", "raw") and preset.family == EnvironmentFamily.DLP:
        raise ConfigurationError("PQC policies are not wired to DLP environments; use dlp-agent, uniform or mlp")
    if kind == "dlp-agent" and preset.family != EnvironmentFamily.DLP:
        raise ConfigurationError("dlp-agent policies only act on DLP environments")
    for name in ("n_qubits", "d_enc"):
        value = getattr(policy, name)
        if value is not None:
            _positive_int(value, f"policy.{name}", minimum=1 if name == "n_qubits" else 0)
    if policy.entangler is not None and policy.entangler not in ("one-to-one", "circular", "all-to-all"):
        raise ConfigurationError(f"Unknown entangler '{policy.entangler}'")
    if not policy.beta > 0:
        raise ConfigurationError(f"policy.beta must be > 0, got {policy.beta}")
    if policy.observables is not None and not isinstance(policy.observables, (str, list)):
        raise ConfigurationError("policy.observables must be a preset name or a list of term lists")
    if any(not isinstance(w, int) or w < 1 for w in policy.mlp_hidden):
        raise ConfigurationError(f"policy.mlp_hidden must list positive widths, got {policy.mlp_hidden}")
    _positive_int(policy.dlp_k, "policy.dlp_k", minimum=0)
    _positive_int(policy.dlp_votes, "policy.dlp_votes")
    if policy.dlp_votes % 2 == 0:
        raise ConfigurationError("policy.dlp_votes must be odd")
    if policy.dlp_shots is not None:
        _positive_int(policy.dlp_shots, "policy.dlp_shots")

    trainer = config.trainer
    _positive_int(trainer.episodes, "trainer.episodes")
    if trainer.batch_size is not None:
        _positive_int(trainer.batch_size, "trainer.batch_size")
    if trainer.horizon is not None:
        _positive_int(trainer.horizon, "trainer.horizon")
    if trainer.gamma is not None and not 0.0 <= trainer.gamma <= 1.0:
        raise ConfigurationError(f"trainer.gamma must lie in [0, 1], got {trainer.gamma}")
    for name in ("lr_phi", "lr_w", "lr_lam", "lr_mlp"):
        value = getattr(trainer, name)
        if value is not None and value < 0:
            raise ConfigurationError(f"trainer.{name} must be >= 0, got {value}")
    bad_groups = set(trainer.freeze) - {"phi", "lam", "w"}
    if bad_groups:
        raise ConfigurationError(f"trainer.freeze accepts phi, lam, w; got {sorted(bad_groups)}")
    if trainer.beta_final is not None and not trainer.beta_final > 0:
        raise ConfigurationError(f"trainer.beta_final must be > 0, got {trainer.beta_final}")
    if trainer.gradient_mode not in GRADIENT_MODES:
        raise ConfigurationError(f"trainer.gradient_mode must be one of {GRADIENT_MODES}")
    _positive_int(trainer.shots, "trainer.shots")
    _positive_int(trainer.parallelism, "trainer.parallelism")

    dlp = config.dlp
    if dlp.noise not in ("binomial", "bounded-uniform"):
        raise ConfigurationError(f"dlp.noise must be binomial or bounded-uniform, got '{dlp.noise}'")
    for name in ("instances", "training_size", "shots", "theorem_training_size", "theorem_shots",
                 "theorem_trials", "monte_carlo_episodes", "agent_episodes"):
        _positive_int(getattr(dlp, name), f"dlp.{name}")
    if any(not 0.0 <= g < 1.0 for g in dlp.gammas):
        raise ConfigurationError(f"dlp.gammas must lie in [0, 1), got {dlp.gammas}")
    if any(len(point) != 3 for point in dlp.bound_points):
        raise ConfigurationError("dlp.bound_points entries must be [accuracy, slip, gamma]")

    if any(not isinstance(s, int) or s < 0 for s in config.run.seeds):
        raise ConfigurationError(f"run.seeds must be non-negative integers, got {config.run.seeds}")
    _positive_int(config.run.eval_episodes, "run.eval_episodes")
