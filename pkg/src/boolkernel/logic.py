"""Mixed three-valued logic and Boolean variation primitives.

Boolean weights live in {TRUE, FALSE} and embed into the reals as +1/-1.
Real numbers project onto the mixed domain {TRUE, FALSE, ZERO} by sign.
"""

from __future__ import annotations

import enum
import math


class Trilean(enum.IntEnum):
    """Value of the mixed logic domain; the integer value is the embedding."""

    FALSE = -1
    ZERO = 0
    TRUE = 1

    def __invert__(self) -> Trilean:
        return Trilean(-int(self))

    @property
    def magnitude(self) -> int:
        return abs(int(self))

    @classmethod
    def from_bool(cls, b: bool) -> Trilean:
        return cls.TRUE if b else cls.FALSE


TRUE = Trilean.TRUE
FALSE = Trilean.FALSE
ZERO = Trilean.ZERO


def embed(w: Trilean | bool) -> int:
    """Real value of a logic value: TRUE -> +1, FALSE -> -1, ZERO -> 0."""
    if isinstance(w, bool):
        return 1 if w else -1
    return int(w)


def _check_finite(x: float) -> None:
    if not math.isfinite(x):
        raise ValueError(f"expected a finite real, got {x!r}")


def project(x: float) -> Trilean:
    """Logic value of a real number. -0.0 projects to ZERO."""
    _check_finite(x)
    if x > 0:
        return TRUE
    if x < 0:
        return FALSE
    return ZERO


def xnor(a: Trilean, b: Trilean) -> Trilean:
    """Three-valued xnor: the Boolean xnor when both are Boolean, ZERO otherwise."""
    return Trilean(int(a) * int(b))


def xor(a: Trilean, b: Trilean) -> Trilean:
    return Trilean(-int(a) * int(b))


def xnor_mixed(w: Trilean | bool, x: float) -> float:
    """xnor between a Boolean weight and a real input.

    The result keeps the magnitude of ``x`` and takes the logic value
    ``xnor(w, project(x))``, which is exactly ``embed(w) * x``.
    """
    _check_finite(x)
    if embed(w) == 0:
        raise ValueError("weight must be TRUE or FALSE")
    return x if embed(w) > 0 else -x


def xor_mixed(w: Trilean | bool, x: float) -> float:
    return -xnor_mixed(w, x)


def flip_decision(q_signal: float, w: Trilean | bool) -> bool:
    """True when the signal agrees in logic value with the weight.

    A zero signal projects to ZERO and never triggers a flip.
    """
    return xnor(project(q_signal), Trilean(embed(w))) == TRUE


def variation(a: Trilean, b: Trilean) -> Trilean:
    """Variation from ``a`` to ``b`` under the order FALSE < TRUE."""
    if b > a:
        return TRUE
    if b < a:
        return FALSE
    return ZERO


def function_variation(f, x: Trilean) -> Trilean:
    """Variation of a Boolean-input function ``f`` with respect to its argument.

    For a logic-valued ``f`` the result is a logic value. For a real-valued
    ``f`` the variation of the output is the real difference
    ``f(not x) - f(x)`` and the result is real.
    """
    fx, fnx = f(x), f(~x)
    dx = variation(x, ~x)
    if isinstance(fx, Trilean):
        return xnor(dx, variation(fx, fnx))
    return xnor_mixed(dx, float(fnx) - float(fx))
