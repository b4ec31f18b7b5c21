"""Fixed-step classical Runge-Kutta helpers."""

import math


def rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + (0.5 * h) * k1)
    k3 = f(t + 0.5 * h, y + (0.5 * h) * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def substeps_for(rate, dt, limit):
    """Smallest number of equal substeps of ``dt`` with ``rate * h < limit``."""
    if rate <= 0.0 or dt <= 0.0:
        return 1
    return max(1, int(math.floor(rate * dt / limit)) + 1)
