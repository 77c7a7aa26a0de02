"""Experiment registry for IDE autocomplete support and command-line dispatch."""

from __future__ import annotations

import re
from functools import lru_cache
from typing import TYPE_CHECKING, Any

from sdcpse._constants import EXPERIMENT_DEFAULTS

if TYPE_CHECKING:
    from collections.abc import Callable


def _sanitize_name(name: str) -> str:
    """Convert an experiment name to a valid Python identifier.

    Examples:
        "circle-lb" -> "CIRCLE_LB"
        "bump-diffusion" -> "BUMP_DIFFUSION"
    """
    if not name:
        return "UNKNOWN"
    # Replace non-alphanumeric with underscore, collapse multiple underscores
    sanitized = re.sub(r"[^A-Z0-9]+", "_", name.upper()).strip("_")
    if sanitized and sanitized[0].isdigit():
        sanitized = "_" + sanitized
    return sanitized or "UNKNOWN"


@lru_cache(maxsize=1)
def _get_runners() -> dict[str, Callable[..., Any]]:
    """Experiment drivers by name (imported on first use)."""
    from sdcpse import bench

    return {
        "circle-lb": bench.run_circle_lb,
        "circle-poisson": bench.run_circle_poisson,
        "sphere-lb": bench.run_sphere_lb,
        "sphere-poisson": bench.run_sphere_poisson,
        "ellipsoid-curvature": bench.run_ellipsoid_curvature,
        "bunny-curvature": bench.run_bunny_curvature,
        "bump-diffusion": bench.run_bump_diffusion,
    }


class _ExperimentNamespace:
    """Experiment names as attributes, e.g. `experiment.CIRCLE_LB == "circle-lb"`."""

    def __init__(self, names: list[str]):
        self._names = {_sanitize_name(name): name for name in names}

    def __getattr__(self, name: str) -> str:
        if name.startswith("_"):
            raise AttributeError(name)
        if name in self._names:
            return self._names[name]
        # Try case-insensitive match
        name_upper = name.upper()
        for key, value in self._names.items():
            if key == name_upper:
                return value
        raise AttributeError(
            f"No experiment named '{name}'. Use dir() to see available options."
        )

    def __dir__(self) -> list[str]:
        return sorted(self._names)

    def __iter__(self):
        return iter(self._names.values())

    def __repr__(self) -> str:
        return f"<ExperimentNamespace: {len(self._names)} experiments>"

    def _ipython_key_completions_(self) -> list[str]:
        """Support bracket completion in IPython."""
        return self.__dir__()


experiment = _ExperimentNamespace(list(EXPERIMENT_DEFAULTS))


def get_runner(name: str) -> Callable[..., Any]:
    """
    The driver of experiment `name`.

    Parameters
    ----------
    name
        Experiment name as used on the command line, e.g. `"sphere-lb"`.

    Returns
    -------
    Callable
        A function taking an `ExperimentConfig`.
    """
    runners = _get_runners()
    if name not in runners:
        raise ValueError(f"unknown experiment {name!r}; available: {', '.join(runners)}")
    return runners[name]
