# SPDX-License-Identifier: Apache-2.0

import logging
from typing import Optional

import yaml


def parse_comma_separated(text, separator=','):
    """Parse a comma-separated string into a list of trimmed values."""
    if not text:
        return []
    return [item.strip() for item in text.split(separator) if item.strip()]


def parse_float_list(text, separator=',') -> list[float]:
    """Parse '1e-2,1e-3' into floats; raises ValueError on a malformed entry."""
    values = []
    for item in parse_comma_separated(text, separator):
        try:
            values.append(float(item))
        except ValueError:
            raise ValueError(f"'{item}' in '{text}' is not a number")
    return values


def parse_int_list(text, separator=',') -> list[int]:
    """Parse '1,2' into integers; raises ValueError on a malformed entry."""
    values = []
    for item in parse_comma_separated(text, separator):
        try:
            values.append(int(item))
        except ValueError:
            raise ValueError(f"'{item}' in '{text}' is not an integer")
    return values


def parse_switch(text: str) -> bool:
    """'on'/'off' (also true/false, yes/no, 1/0) to a boolean."""
    lowered = str(text).strip().lower()
    if lowered in ('on', 'true', 'yes', '1'):
        return True
    if lowered in ('off', 'false', 'no', '0'):
        return False
    raise ValueError(f"expected 'on' or 'off', got '{text}'")


def load_yaml_config(config_path) -> Optional[dict]:
    """Load a YAML (or JSON) mapping from ``config_path``.

    Raises:
        ValueError: the file cannot be read or does not hold a mapping.
    """
    if not config_path:
        return None
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            config = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        logging.error(f'Error loading config file {config_path}: {str(e)}')
        raise ValueError(f'Cannot load config file {config_path}: {str(e)}') from e
    if not isinstance(config, dict):
        raise ValueError(f'Invalid configuration in {config_path}: expected a mapping')
    return config
