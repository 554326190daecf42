"""
Configuration module for managing toolkit defaults.
Built-in defaults are merged with an optional JSON file; command-line flags
override both (see src.main).
"""

import copy
import json
import os
from typing import Dict, Any, Optional, List


DEFAULTS: Dict[str, Any] = {
    "runtime": {
        "seed": 0,
        "jobs": None,
    },
    "extractor": {
        "layers": 2,
        "channels": [32, 64],
        "kernel_size": 3,
        "stride": 2,
    },
    "augment": {
        "lowfreq": {"beta": 0.01},
        "color": {"strength": 0.4},
        "frosted": {"radius": 4},
        "poster": {"levels": 8},
        "mural": {"radius": 3, "levels": 8},
    },
    "components": {
        "connectivity": 8,
        "min_area": 64,
    },
    "grabcut": {
        "gmm_components": 5,
        "max_iterations": 5,
        "gamma": 50.0,
        "convergence_eps": 1e-3,
    },
    "evaluation": {
        "num_classes": 19,
        "absent_as_zero": False,
    },
}


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class Config:
    """Manages toolkit configuration: built-in defaults plus an optional JSON file."""

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize configuration.

        Args:
            config_path: Path to a JSON file overriding the defaults. When None,
                only the built-in defaults are used.
        """
        self.config_path = config_path
        self.config_data = self._load_config()

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from JSON file and merge it over the defaults."""
        if self.config_path is None:
            return copy.deepcopy(DEFAULTS)

        if not os.path.exists(self.config_path):
            raise FileNotFoundError(
                f"Configuration file not found: {self.config_path}\n"
                "Please create one based on config.example.json."
            )

        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Invalid JSON in config file: {e}")

        if not isinstance(data, dict):
            raise ValueError("Configuration file must contain a JSON object")
        return _merge(DEFAULTS, data)

    def get(self, key_path: str, default: Any = None) -> Any:
        """
        Get configuration value using dot notation.

        Example:
            config.get('extractor.stride')
            config.get('augment.lowfreq.beta', default=0.01)
        """
        keys = key_path.split('.')
        value = self.config_data

        for key in keys:
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default

        return value

    # Runtime
    @property
    def seed(self) -> int:
        return int(self.get('runtime.seed', 0))

    @property
    def jobs(self) -> int:
        """Worker count; defaults to the number of logical CPUs."""
        jobs = self.get('runtime.jobs')
        if jobs is None:
            return os.cpu_count() or 1
        return int(jobs)

    # Extractor
    @property
    def extractor_layers(self) -> int:
        return int(self.get('extractor.layers', 2))

    @property
    def extractor_channels(self) -> List[int]:
        return [int(c) for c in self.get('extractor.channels', [32, 64])]

    @property
    def kernel_size(self) -> int:
        return int(self.get('extractor.kernel_size', 3))

    @property
    def stride(self) -> int:
        return int(self.get('extractor.stride', 2))

    # Weak labels
    @property
    def connectivity(self) -> int:
        return int(self.get('components.connectivity', 8))

    @property
    def min_area(self) -> int:
        return int(self.get('components.min_area', 64))

    @property
    def gmm_components(self) -> int:
        return int(self.get('grabcut.gmm_components', 5))

    @property
    def max_iterations(self) -> int:
        return int(self.get('grabcut.max_iterations', 5))

    @property
    def gamma(self) -> float:
        return float(self.get('grabcut.gamma', 50.0))

    @property
    def convergence_eps(self) -> float:
        return float(self.get('grabcut.convergence_eps', 1e-3))

    # Evaluation
    @property
    def num_classes(self) -> int:
        return int(self.get('evaluation.num_classes', 19))

    @property
    def absent_as_zero(self) -> bool:
        return bool(self.get('evaluation.absent_as_zero', False))

    def validate(self) -> bool:
        """
        Validate configuration settings.

        Returns:
            True if configuration is valid.

        Raises:
            ValueError if configuration is invalid.
        """
        errors = []

        if self.seed < 0:
            errors.append("runtime.seed must be non-negative")

        if self.get('runtime.jobs') is not None and self.jobs < 1:
            errors.append("runtime.jobs must be at least 1")

        if len(self.extractor_channels) != self.extractor_layers:
            errors.append(
                f"extractor.channels lists {len(self.extractor_channels)} layers "
                f"but extractor.layers is {self.extractor_layers}"
            )

        if self.kernel_size % 2 == 0:
            errors.append("extractor.kernel_size must be odd")

        if self.stride < 1:
            errors.append("extractor.stride must be at least 1")

        if self.connectivity not in (4, 8):
            errors.append("components.connectivity must be 4 or 8")

        if self.min_area < 1:
            errors.append("components.min_area must be at least 1")

        if self.gmm_components < 1:
            errors.append("grabcut.gmm_components must be at least 1")

        if self.max_iterations < 1:
            errors.append("grabcut.max_iterations must be at least 1")

        if self.gamma <= 0:
            errors.append("grabcut.gamma must be positive")

        if not 1 <= self.num_classes <= 255:
            errors.append("evaluation.num_classes must be in 1..255")

        if errors:
            raise ValueError("Configuration validation failed:\n" + "\n".join(errors))

        return True

    def __repr__(self) -> str:
        """String representation of configuration."""
        return f"Config(path={self.config_path}, seed={self.seed}, classes={self.num_classes})"
