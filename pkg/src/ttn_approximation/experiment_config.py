# SPDX-License-Identifier: Apache-2.0

"""Experiment configuration from a YAML/JSON file, explicit flags and free-form overrides."""

import logging
import re
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field, field_validator

from benchmarks.functions import resolve_function
from benchmarks.utils import load_yaml_config
from ttn_core.boosted_least_squares import StabilityParams
from ttn_core.learner import LearnerConfig
from ttn_core.tree_adaptation import TreeAdaptationParams


logger = logging.getLogger(__name__)

# Field aliases per section: actual field name -> list of accepted aliases
FIELD_ALIASES = {
    'experiment': {
        'function': ['function', 'func', 'benchmark'],
        'dimension': ['dimension', 'dim', 'd'],
        'tolerances': ['tolerances', 'tolerance', 'tol', 'eps'],
        'tree': ['tree', 'tree_mode'],
        'trials': ['trials', 'n_trials'],
        'n_test': ['n_test', 'test_size'],
        'seed': ['seed', 'master_seed'],
        'absolute_error': ['absolute_error', 'absolute'],
        'trial_workers': ['trial_workers'],
        'function_args': ['function_args', 'args'],
    },
    'learner': {
        'sampling_factor': ['sampling_factor', 'k_pca', 'kPCA'],
        'adaptive_pca': ['adaptive_pca', 'adaptivePca'],
        'adaptive_basis': ['adaptive_basis', 'adaptiveBasis'],
        'degree': ['degree', 'p'],
        'max_degree': ['max_degree', 'p_max'],
        'level_cap': ['level_cap', 'l_max'],
    },
    'stability': {
        'repetitions': ['repetitions', 'M', 'stability_repetitions'],
        'delta': ['delta', 'stability_delta'],
        'eta': ['eta', 'stability_eta'],
        'keep_fraction': ['keep_fraction', 'p_r'],
    },
    'tree_adaptation': {
        'coarse_tolerance': ['coarse_tolerance', 'eps_c', 'tol_coarse'],
        'gamma_first': ['gamma_first', 'gamma1'],
        'gamma_second': ['gamma_second', 'gamma2'],
        'iterations': ['iterations', 'n_p'],
    },
}

SECTION_NAMES = ('learner', 'stability', 'tree_adaptation')

# Free-form CLI overrides look like --learner.k_pca=4 or --stability.delta=0.5
CLI_OVERRIDE_PATTERN = r'^(learner|stability|tree_adaptation)\.([A-Za-z0-9_]+)$'


class TreeMode(str, Enum):
    BALANCED = 'balanced'
    RT = 'rt'
    RBT = 'rbt'
    SLO = 'slo'
    FILE = 'file'


class ExperimentConfig(BaseModel):
    function: str = Field(default='anisotropic6', description='Registered benchmark function')
    dimension: Optional[int] = Field(
        default=None, ge=2, description='Input dimension d (function default when omitted)'
    )
    function_args: Dict[str, Any] = Field(
        default_factory=dict, description='Extra arguments of the function, e.g. sigma'
    )
    tolerances: list[float] = Field(
        default_factory=lambda: [1e-4], min_length=1, description='Grid of tolerances eps'
    )
    tree: str = Field(
        default='balanced', description='balanced, rt, rbt, slo, or file:PATH to a node list'
    )
    learner: LearnerConfig = Field(default_factory=LearnerConfig)
    tree_adaptation: TreeAdaptationParams = Field(default_factory=TreeAdaptationParams)
    trials: int = Field(default=10, ge=1, description='Independent trials per tolerance')
    n_test: int = Field(default=1000, ge=1, description='Test points per trial')
    seed: int = Field(default=0, ge=0, description='Master seed of all trial streams')
    absolute_error: bool = Field(
        default=False, description='Report the absolute instead of the relative test error'
    )
    trial_workers: int = Field(default=1, ge=1, description='Trials run concurrently')

    @field_validator('function')
    @classmethod
    def _known_function(cls, value: str) -> str:
        return resolve_function(value)

    @field_validator('tolerances')
    @classmethod
    def _positive_tolerances(cls, value: list[float]) -> list[float]:
        bad = [t for t in value if not t > 0]
        if bad:
            raise ValueError(f'tolerances must be positive, got {bad}')
        return value

    @field_validator('tree')
    @classmethod
    def _known_tree(cls, value: str) -> str:
        mode, _ = split_tree_mode(value)
        return value if mode == TreeMode.FILE else mode.value

    @property
    def tree_mode(self) -> TreeMode:
        return split_tree_mode(self.tree)[0]

    @property
    def tree_path(self) -> Optional[Path]:
        return split_tree_mode(self.tree)[1]


def split_tree_mode(text: str) -> tuple[TreeMode, Optional[Path]]:
    """'rbt' -> (RBT, None); 'file:trees/t.json' -> (FILE, Path('trees/t.json'))."""
    if text.startswith('file:'):
        path = text[len('file:') :]
        if not path:
            raise ValueError("tree mode 'file:' needs a path")
        return TreeMode.FILE, Path(path)
    try:
        return TreeMode(text.strip().lower()), None
    except ValueError:
        raise ValueError(
            f"Unknown tree mode '{text}'. Expected one of balanced, rt, rbt, slo or file:PATH"
        )


def _find_actual_field(section: str, field_alias: str) -> Optional[str]:
    """
    Find the actual field name for a given alias within a section.

    :param section: Section of FIELD_ALIASES to search
    :param field_alias: The alias to look up
    :return: The actual field name or None if not found
    """
    for actual_field, aliases in FIELD_ALIASES[section].items():
        if field_alias in aliases:
            return actual_field
    if field_alias in _section_model_fields(section):
        return field_alias
    return None


def _section_model_fields(section: str) -> set[str]:
    model = {
        'experiment': ExperimentConfig,
        'learner': LearnerConfig,
        'stability': StabilityParams,
        'tree_adaptation': TreeAdaptationParams,
    }[section]
    return set(model.model_fields) - set(SECTION_NAMES)


def _resolve_section(section: str, values: Dict[str, Any], source: str) -> Dict[str, Any]:
    """
    Map aliased keys of one section to actual field names.

    :param section: Section name in FIELD_ALIASES
    :param values: Raw key/value pairs
    :param source: Where the values came from, for messages
    :raises ValueError: If two aliases of the same field are given
    :return: Dictionary keyed by actual field names; unknown keys are dropped
    """
    resolved: Dict[str, Any] = {}
    seen_keys: Dict[str, list[str]] = {}
    for key, value in values.items():
        actual_field = _find_actual_field(section, key)
        if actual_field is None:
            logging.warning(
                f"Invalid field '{key}' for section '{section}' in {source} will be ignored."
            )
            continue
        seen_keys.setdefault(actual_field, []).append(key)
        if len(seen_keys[actual_field]) > 1:
            raise ValueError(
                f"Duplicate field '{actual_field}' for section '{section}' in {source}. "
                f'Found multiple aliases: {seen_keys[actual_field]}'
            )
        resolved[actual_field] = value
    return resolved


def _load_config_from_file(config_from_file: Dict[str, Any]) -> Dict[str, Any]:
    """
    Turn the mapping read from a config file into ExperimentConfig keyword arguments.

    Top-level keys configure the experiment; the sections ``learner``,
    ``stability`` and ``tree_adaptation`` configure the algorithms.
    A ``stability`` mapping nested in ``learner`` is accepted too.

    :param config_from_file: Configuration data from the YAML/JSON file
    :return: Dictionary ready for ExperimentConfig.model_validate
    """
    top_level = {k: v for k, v in config_from_file.items() if k not in SECTION_NAMES}
    experiment = _resolve_section('experiment', top_level, 'config file')

    sections: Dict[str, Dict[str, Any]] = {}
    for section in SECTION_NAMES:
        raw = config_from_file.get(section) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"Section '{section}' in config file must be a mapping")
        sections[section] = dict(raw)
    nested = sections['learner'].pop('stability', None)
    if nested:
        if sections['stability']:
            raise ValueError(
                "Duplicate stability section in config file: found both 'stability' "
                "and 'learner.stability'"
            )
        sections['stability'] = dict(nested)

    resolved = {s: _resolve_section(s, sections[s], 'config file') for s in SECTION_NAMES}
    if 'tolerances' in experiment and not isinstance(experiment['tolerances'], list):
        experiment['tolerances'] = [experiment['tolerances']]
    return _assemble(experiment, resolved)


def _load_config_from_cli(cli_overrides: Dict[str, str]) -> Dict[str, Dict[str, Any]]:
    """
    Group free-form overrides like ``learner.k_pca=4`` by section.

    :param cli_overrides: Unknown command line arguments parsed into a dict
    :raises ValueError: If duplicate field aliases are given for the same section
    :return: Section name -> {alias: value}
    """
    grouped: Dict[str, Dict[str, Any]] = {section: {} for section in SECTION_NAMES}
    for arg, value in cli_overrides.items():
        match = re.match(CLI_OVERRIDE_PATTERN, arg)
        if not match:
            logging.warning(
                f"Invalid argument '{arg}' will be ignored. "
                f'Expected format: --<learner|stability|tree_adaptation>.<field>=<value>'
            )
            continue
        grouped[match.group(1)][match.group(2)] = value
    return {s: _resolve_section(s, grouped[s], 'command line') for s in SECTION_NAMES}


def _assemble(experiment: Dict[str, Any], sections: Dict[str, Dict[str, Any]]) -> Dict[str, Any]:
    assembled = dict(experiment)
    learner = dict(sections.get('learner', {}))
    if sections.get('stability'):
        learner['stability'] = sections['stability']
    if learner:
        assembled['learner'] = learner
    if sections.get('tree_adaptation'):
        assembled['tree_adaptation'] = sections['tree_adaptation']
    return assembled


def _fill_unset(data: Dict[str, Any], defaults: Dict[str, Any]):
    """Recursively copy entries of ``defaults`` that ``data`` does not set."""
    for key, value in defaults.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            _fill_unset(data[key], value)
        else:
            data.setdefault(key, value)


def build_experiment_config(
    config_file_path: str = '',
    cli_settings: Optional[Dict[str, Any]] = None,
    cli_overrides: Optional[Dict[str, str]] = None,
) -> ExperimentConfig:
    """
    Build the experiment configuration.

    A config file takes priority: when one is given, free-form command line
    overrides are ignored (with a warning), and explicit flags only fill the
    top-level fields the file leaves unset. Without a file, explicit flags and
    free-form overrides are combined.

    :param config_file_path: Optional path to a YAML/JSON file
    :param cli_settings: Explicit flags, keyed by ExperimentConfig field or
        ``learner.<field>``; None values are skipped
    :param cli_overrides: Free-form ``section.field`` overrides
    :raises ValueError: On unreadable files, duplicate aliases or invalid values
    :return: The validated ExperimentConfig
    """
    cli_settings = {k: v for k, v in (cli_settings or {}).items() if v is not None}
    cli_overrides = cli_overrides or {}

    flag_sections: Dict[str, Dict[str, Any]] = {section: {} for section in SECTION_NAMES}
    flag_experiment: Dict[str, Any] = {}
    for key, value in cli_settings.items():
        section, _, field = key.rpartition('.')
        if section:
            flag_sections[section][field] = value
        else:
            flag_experiment[key] = value

    if config_file_path:
        data = _load_config_from_file(load_yaml_config(config_file_path))
        if cli_overrides:
            logging.warning(
                'Both config file and command line overrides detected. '
                'Using config file configuration, command line overrides are ignored.'
            )
        _fill_unset(data, _assemble(flag_experiment, flag_sections))
        logger.info(f'Loaded experiment configuration from {config_file_path}')
    else:
        overrides = _load_config_from_cli(cli_overrides)
        for section in SECTION_NAMES:
            overrides[section] = {**flag_sections[section], **overrides[section]}
        data = _assemble(flag_experiment, overrides)

    return ExperimentConfig.model_validate(data)
