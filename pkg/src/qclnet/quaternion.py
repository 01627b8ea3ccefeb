"""Scalar quaternion algebra.

A quaternion is r + x*i + y*j + z*k with real coefficients. Everything
downstream (the four-plane tensors, the Hamilton-product convolution)
reduces elementwise to the arithmetic defined here, so this module is
the reference the heavy kernels are tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError, ValidationError


@dataclass(frozen=True)
class Quaternion:
    """One hypercomplex scalar (r, x, y, z). Components must be finite."""

    r: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        for name in ("r", "x", "y", "z"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"quaternion component {name} is not finite: {v!r}")

    def is_pure(self) -> bool:
        return self.r == 0.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.r, self.x, self.y, self.z)


ZERO = Quaternion(0.0, 0.0, 0.0, 0.0)
ONE = Quaternion(1.0, 0.0, 0.0, 0.0)
I = Quaternion(0.0, 1.0, 0.0, 0.0)
J = Quaternion(0.0, 0.0, 1.0, 0.0)
K = Quaternion(0.0, 0.0, 0.0, 1.0)


def add(q: Quaternion, p: Quaternion) -> Quaternion:
    """Componentwise sum."""
    return Quaternion(q.r + p.r, q.x + p.x, q.y + p.y, q.z + p.z)


def scalar_mul(a: float, q: Quaternion) -> Quaternion:
    """Scale every component by the real scalar a."""
    return Quaternion(a * q.r, a * q.x, a * q.y, a * q.z)


def conjugate(q: Quaternion) -> Quaternion:
    """Flip the sign of the imaginary part: (r, -x, -y, -z)."""
    return Quaternion(q.r, -q.x, -q.y, -q.z)


def norm(q: Quaternion) -> float:
    """Euclidean length sqrt(r^2 + x^2 + y^2 + z^2)."""
    return math.sqrt(q.r * q.r + q.x * q.x + q.y * q.y + q.z * q.z)


def unit(q: Quaternion) -> Quaternion:
    """q scaled to length 1. The zero quaternion has no direction."""
    n = norm(q)
    if n == 0.0:
        raise DomainError("cannot normalize the zero quaternion")
    return Quaternion(q.r / n, q.x / n, q.y / n, q.z / n)


def hamilton(q: Quaternion, p: Quaternion) -> Quaternion:
    """Hamilton product q*p (non-commutative; i*j = k but j*i = -k)."""
    return Quaternion(
        q.r * p.r - q.x * p.x - q.y * p.y - q.z * p.z,
        q.r * p.x + q.x * p.r + q.y * p.z - q.z * p.y,
        q.r * p.y - q.x * p.z + q.y * p.r + q.z * p.x,
        q.r * p.z + q.x * p.y - q.y * p.x + q.z * p.r,
    )
