"""Small discretization helpers shared by the controllers."""

from __future__ import annotations

import math


def resonator_coeffs(num: float, omega_b: float, omega_r: float, dt: float):
    """Biquad for num*s/(s^2 + omega_b*s + omega_r^2).

    Bilinear transform prewarped at ``omega_r`` so the discrete resonance
    lands exactly on the continuous one. Returns ``(b0, b1, b2, a1, a2)``
    normalized to a0 = 1.
    """
    k = omega_r / math.tan(omega_r * dt / 2.0)
    a0 = k * k + omega_b * k + omega_r * omega_r
    a1 = (2.0 * omega_r * omega_r - 2.0 * k * k) / a0
    a2 = (k * k - omega_b * k + omega_r * omega_r) / a0
    b0 = num * k / a0
    return b0, 0.0, -b0, a1, a2


def biquad_response(coeffs, omega: float, dt: float) -> complex:
    b0, b1, b2, a1, a2 = coeffs
    zi = complex(math.cos(omega * dt), -math.sin(omega * dt))
    return (b0 + b1 * zi + b2 * zi * zi) / (1.0 + a1 * zi + a2 * zi * zi)


class Biquad:
    """Transposed direct-form II section with an optional state hold."""

    __slots__ = ("b0", "b1", "b2", "a1", "a2", "z1", "z2")

    def __init__(self, coeffs):
        self.b0, self.b1, self.b2, self.a1, self.a2 = coeffs
        self.z1 = 0.0
        self.z2 = 0.0

    def step(self, x: float) -> float:
        y = self.b0 * x + self.z1
        self.z1 = self.b1 * x - self.a1 * y + self.z2
        self.z2 = self.b2 * x - self.a2 * y
        return y

    def reset(self) -> None:
        self.z1 = self.z2 = 0.0
