"""Analytic fields used as sources, boundary data and exact solutions.

All functions take physical coordinates ``(x, y)`` (broadcastable arrays).
Vector fields return a pair ``(fx, fy)``. In 2D the curl of a scalar is
``curl psi = (d_y psi, -d_x psi)`` and the curl of a vector is the scalar
``d_x u_y - d_y u_x``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Pulse",
    "EllipticRing",
    "sincos_poisson",
    "sinsin_poisson",
    "sincos_maxwell",
    "curl_of_gradient_free_field",
    "dipole_current",
    "PulseCurrent",
]

PI = np.pi


@dataclass(frozen=True)
class Pulse:
    """Localized bump ``psi = exp(-r^4 / (2 sigma^2))`` around ``(x0, y0)``."""

    x0: float = 0.5
    y0: float = 0.5
    sigma: float = 0.02

    def _r2(self, x, y):
        dx, dy = np.asarray(x) - self.x0, np.asarray(y) - self.y0
        return dx, dy, dx * dx + dy * dy

    def psi(self, x, y):
        _, _, r2 = self._r2(x, y)
        return np.exp(-r2 * r2 / (2 * self.sigma ** 2))

    def grad(self, x, y):
        dx, dy, r2 = self._r2(x, y)
        c = -self.psi(x, y) * 2 * r2 / self.sigma ** 2
        return c * dx, c * dy

    def curl(self, x, y):
        gx, gy = self.grad(x, y)
        return gy, -gx

    def laplacian(self, x, y):
        _, _, r2 = self._r2(x, y)
        s2 = self.sigma ** 2
        return self.psi(x, y) * (4 * r2 ** 3 / s2 ** 2 - 8 * r2 / s2)


@dataclass(frozen=True)
class PulseCurrent:
    """Time-dependent current ``J = curl psi - cos(omega t) grad psi``.

    Its charge density (``div J + d_t rho = 0``, ``rho(0) = 0``) is
    ``rho = sin(omega t) / omega * laplacian(psi)``.
    """

    pulse: Pulse = Pulse()
    omega: float = 2 * PI

    def current(self, t, x, y):
        cx, cy = self.pulse.curl(x, y)
        gx, gy = self.pulse.grad(x, y)
        c = np.cos(self.omega * t)
        return cx - c * gx, cy - c * gy

    def charge(self, t, x, y):
        return np.sin(self.omega * t) / self.omega * self.pulse.laplacian(x, y)

    def spatial_parts(self):
        """``J(t) = J0 + c(t) J1`` with ``c(t) = cos(omega t)``."""
        return self.pulse.curl, (lambda x, y: tuple(-g for g in self.pulse.grad(x, y))), \
            (lambda t: np.cos(self.omega * np.asarray(t)))


@dataclass(frozen=True)
class EllipticRing:
    """Elliptic-ring profile ``phi = exp(-tau^2 / (2 sigma^2))``.

    ``tau = a s^2 + b t^2 - 1`` with ``s = x~ - y~``, ``t = x~ + y~`` and
    ``(x~, y~) = (x - x0, y - y0)``.
    """

    x0: float = 1.5
    y0: float = 1.5
    a: float = (1 / 1.7) ** 2
    b: float = (1 / 1.1) ** 2
    sigma: float = 0.11

    def _st(self, x, y):
        xt, yt = np.asarray(x) - self.x0, np.asarray(y) - self.y0
        return xt - yt, xt + yt

    def tau(self, x, y):
        s, t = self._st(x, y)
        return self.a * s ** 2 + self.b * t ** 2 - 1

    def grad_tau(self, x, y):
        s, t = self._st(x, y)
        return 2 * self.a * s + 2 * self.b * t, -2 * self.a * s + 2 * self.b * t

    def phi(self, x, y):
        return np.exp(-self.tau(x, y) ** 2 / (2 * self.sigma ** 2))

    def source(self, x, y):
        """``f = -laplacian(phi)``."""
        tau = self.tau(x, y)
        gx, gy = self.grad_tau(x, y)
        g2 = gx * gx + gy * gy
        lap_tau = 4 * (self.a + self.b)
        s2 = self.sigma ** 2
        return -(tau ** 2 * g2 / s2 ** 2 - (tau * lap_tau + g2) / s2) * self.phi(x, y)

    def current(self, x, y):
        """``J = phi curl tau``."""
        gx, gy = self.grad_tau(x, y)
        ph = self.phi(x, y)
        return ph * gy, -ph * gx


def sincos_poisson():
    """``phi = sin(pi x) cos(pi y)`` and ``f = -laplacian(phi) = 2 pi^2 phi``."""
    phi = lambda x, y: np.sin(PI * x) * np.cos(PI * y)
    f = lambda x, y: 2 * PI ** 2 * np.sin(PI * x) * np.cos(PI * y)
    return phi, f


def sinsin_poisson():
    """``phi = sin x sin y`` (zero on the boundary of ``(0, pi)^2``) and ``f = 2 phi``."""
    phi = lambda x, y: np.sin(x) * np.sin(y)
    f = lambda x, y: 2 * np.sin(x) * np.sin(y)
    return phi, f


def sincos_maxwell():
    """Exact pair for ``curl curl u - pi^2 u = J``.

    ``u = (sin(pi y), sin(pi x) cos(pi y))`` and
    ``J = (-pi^2 sin(pi y) cos(pi x), 0)``.
    """
    u = lambda x, y: (np.sin(PI * y) + 0 * x, np.sin(PI * x) * np.cos(PI * y))
    J = lambda x, y: (-PI ** 2 * np.sin(PI * y) * np.cos(PI * x), 0 * x + 0 * y)
    curl_u = lambda x, y: PI * np.cos(PI * y) * (np.cos(PI * x) - 1)
    return u, J, PI, curl_u


def curl_of_gradient_free_field():
    """``v = (sin y, sin x cos y)`` and its scalar curl ``cos x cos y - cos y``."""
    v = lambda x, y: (np.sin(y) + 0 * x, np.sin(x) * np.cos(y))
    cv = lambda x, y: np.cos(x) * np.cos(y) - np.cos(y)
    return v, cv


def dipole_current(p0=(1.0, 1.0), p1=(2.0, 2.0), sigma=0.02):
    """Scalar dipole ``J_z = psi_0 - psi_1`` of two pulses."""
    a, b = Pulse(*p0, sigma), Pulse(*p1, sigma)
    return lambda x, y: a.psi(x, y) - b.psi(x, y)
