# SPDX-License-Identifier: Apache-2.0

import logging
from pathlib import Path

import pytest
from pydantic import ValidationError

from ttn_approximation import parse_unknown_args_to_dict
from ttn_approximation.experiment_config import (
    ExperimentConfig,
    TreeMode,
    build_experiment_config,
    split_tree_mode,
)


def write_config(tmp_path, text):
    path = tmp_path / 'experiment.yaml'
    path.write_text(text)
    return str(path)


def test_defaults():
    config = build_experiment_config()
    assert config.function == 'anisotropic6'
    assert config.tolerances == [1e-4]
    assert config.tree_mode == TreeMode.BALANCED
    assert config.learner.sampling_factor == 3
    assert config.tree_adaptation.coarse_tolerance == 1e-2


def test_cli_overrides_with_aliases():
    config = build_experiment_config(
        cli_overrides={
            'learner.k_pca': '4',
            'stability.M': '50',
            'stability.p_r': '0.5',
            'tree_adaptation.eps_c': '0.05',
            'tree_adaptation.n_p': '12',
        }
    )
    assert config.learner.sampling_factor == 4
    assert config.learner.stability.repetitions == 50
    assert config.learner.stability.keep_fraction == 0.5
    assert config.tree_adaptation.coarse_tolerance == 0.05
    assert config.tree_adaptation.iterations == 12


def test_duplicate_aliases_are_rejected():
    with pytest.raises(ValueError, match='Duplicate field'):
        build_experiment_config(cli_overrides={'learner.k_pca': '4', 'learner.kPCA': '5'})


def test_unknown_overrides_are_ignored(caplog):
    with caplog.at_level(logging.WARNING):
        config = build_experiment_config(
            cli_overrides={'learner.colour': 'blue', 'verbose': 'yes', 'stability.delta': '0.5'}
        )
    assert config.learner.stability.delta == 0.5
    assert "Invalid field 'colour'" in caplog.text
    assert "Invalid argument 'verbose'" in caplog.text


def test_explicit_flags_and_overrides_combine():
    config = build_experiment_config(
        cli_settings={
            'function': 'sum_bivariate',
            'dimension': 6,
            'tolerances': [1e-2, 1e-3],
            'learner.adaptive_pca': False,
            'trials': None,
        },
        cli_overrides={'learner.degree': '5'},
    )
    assert config.function == 'sum-bivariate'
    assert config.dimension == 6
    assert config.tolerances == [1e-2, 1e-3]
    assert config.learner.adaptive_pca is False
    assert config.learner.degree == 5
    assert config.trials == 10


def test_config_file_takes_priority(tmp_path, caplog):
    path = write_config(
        tmp_path,
        'function: sum-bivariate\n'
        'dim: 4\n'
        'tol: 1.0e-3\n'
        'tree: RBT\n'
        'learner:\n'
        '  kPCA: 2\n'
        '  stability:\n'
        '    M: 10\n'
        'tree_adaptation:\n'
        '  gamma1: 3\n',
    )
    with caplog.at_level(logging.WARNING):
        config = build_experiment_config(
            path,
            cli_settings={'dimension': 8, 'trials': 3, 'learner.degree': 4},
            cli_overrides={'learner.k_pca': '7'},
        )
    assert config.function == 'sum-bivariate'
    assert config.dimension == 4
    assert config.tolerances == [1e-3]
    assert config.tree == 'rbt'
    assert config.learner.sampling_factor == 2
    assert config.learner.stability.repetitions == 10
    assert config.tree_adaptation.gamma_first == 3
    # Explicit flags fill what the file leaves unset.
    assert config.trials == 3
    assert config.learner.degree == 4
    assert 'command line overrides are ignored' in caplog.text


def test_config_file_errors(tmp_path):
    twice = write_config(tmp_path, 'learner:\n  stability:\n    M: 3\nstability:\n  M: 4\n')
    with pytest.raises(ValueError, match='Duplicate stability'):
        build_experiment_config(twice)
    with pytest.raises(ValueError):
        build_experiment_config(str(tmp_path / 'absent.yaml'))
    aliases = write_config(tmp_path, 'dim: 4\nd: 6\n')
    with pytest.raises(ValueError, match='Duplicate field'):
        build_experiment_config(aliases)


def test_tree_modes():
    assert split_tree_mode('rbt') == (TreeMode.RBT, None)
    assert split_tree_mode('file:trees/t.yaml') == (TreeMode.FILE, Path('trees/t.yaml'))
    config = ExperimentConfig(tree='file:trees/t.yaml')
    assert config.tree_mode == TreeMode.FILE
    assert config.tree_path == Path('trees/t.yaml')
    with pytest.raises(ValueError):
        split_tree_mode('file:')
    with pytest.raises(ValidationError):
        ExperimentConfig(tree='zigzag')


def test_invalid_values():
    with pytest.raises(ValidationError):
        ExperimentConfig(function='rosenbrock')
    with pytest.raises(ValidationError):
        ExperimentConfig(tolerances=[1e-3, -1.0])
    with pytest.raises(ValidationError):
        ExperimentConfig(tolerances=[])
    with pytest.raises(ValidationError):
        build_experiment_config(cli_overrides={'learner.k_pca': 'many'})


def test_repeated_command_line_override_keeps_the_last_value(caplog):
    args = ['--learner.k_pca=3', '--stability.M=50', '--learner.k_pca=4']
    with caplog.at_level(logging.WARNING):
        overrides = parse_unknown_args_to_dict(args)
    assert overrides == {'learner.k_pca': '4', 'stability.M': '50'}
    assert caplog.text.count("Duplicate argument '--learner.k_pca'") == 1
