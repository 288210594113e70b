# wmsn/utility.py
"""Distortion utilities U(D), decreasing and concave on (0, 1)."""

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Utility:
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    # True when the distortion subproblem has the R / (V*varpi1 + R) closed form
    closed_form: bool = False


LOG1M = Utility(
    name="log1m",
    value=lambda d: np.log1p(-np.asarray(d, dtype=float)),
    derivative=lambda d: -1.0 / (1.0 - np.asarray(d, dtype=float)),
    closed_form=True,
)

NEG_LINEAR = Utility(
    name="neg_linear",
    value=lambda d: -np.asarray(d, dtype=float),
    derivative=lambda d: -np.ones_like(np.asarray(d, dtype=float)),
)

NEG_SQUARE = Utility(
    name="neg_square",
    value=lambda d: -np.square(np.asarray(d, dtype=float)),
    derivative=lambda d: -2.0 * np.asarray(d, dtype=float),
)

UTILITIES: Dict[str, Utility] = {u.name: u for u in (LOG1M, NEG_LINEAR, NEG_SQUARE)}


def get_utility(name: str) -> Utility:
    try:
        return UTILITIES[name]
    except KeyError:
        raise ConfigError(f"unknown utility {name!r}; choose from {sorted(UTILITIES)}") from None
