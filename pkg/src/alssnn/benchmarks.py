"""Desk-scale benchmark generators: a forced prey-predator ODE and a
synthetic Wiener-Hammerstein cascade.

Both return plain Datasets in the package CSV layout. Generation is pure
given (params, seed), so identical seeds give bit-identical data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Dataset
from .errors import DataError, NumericalError
from .linear_id import LinearSS
from .models import simulate

__all__ = [
    "PreyPredatorParams",
    "SinusoidalForcing",
    "WhParams",
    "WhInputSpec",
    "simulate_prey_predator",
    "generate_wh",
    "default_wh_params",
    "second_order_block",
    "pp_params_to_dict",
    "wh_params_to_dict",
]

POPULATION_BOUND = 1e8


@dataclass(frozen=True)
class PreyPredatorParams:
    """Three-species model: two forced prey (x1, x2) and one predator (x3).

        dx1/dt = a1 x1 - b1 x1 x2 - c1 x1 x3 + d1 u1^2
        dx2/dt = a2 x2 - b2 x1 x2 - c2 x1 x3 + d2 u2^2
        dx3/dt = -e x3 + f x1 x3 + g x2 x3

    All of x2's loss terms carry an x1 factor, so parameter sets with
    a2 > 0 let x2 run away whenever x1 dips: positive intrinsic prey
    growth is structurally unsafe here. The defaults instead use decaying
    prey (a1, a2 < 0) sustained by the squared forcing, which keeps every
    trajectory bounded (dx_i/dt <= a_i x_i + d_i max u_i^2 for the prey)
    while the predator loop still produces a visibly nonlinear
    oscillation. The default dt samples a few times per dominant time
    constant so a modest FIR window captures the system memory; defaults
    are recorded in generated-file metadata.
    """

    a1: float = -0.2
    a2: float = -0.2
    b1: float = 0.005
    b2: float = 0.005
    c1: float = 0.05
    c2: float = 0.05
    d1: float = 0.5
    d2: float = 0.5
    e: float = 0.3
    f: float = 0.025
    g: float = 0.025
    dt: float = 0.5
    x0: tuple[float, float, float] = (8.0, 8.0, 4.0)

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise DataError(f"dt must be positive, got {self.dt}")
        vals = [self.a1, self.a2, self.b1, self.b2, self.c1, self.c2,
                self.d1, self.d2, self.e, self.f, self.g, *self.x0]
        if not np.all(np.isfinite(vals)):
            raise DataError("prey-predator parameters must be finite")


@dataclass(frozen=True)
class SinusoidalForcing:
    """u_i(t) = A_i sin(t + phi_i) + A_i sin(t/10 + phi_i), two channels."""

    A1: float = 2.0
    A2: float = 2.0
    phi1: float = 0.0
    phi2: float = 1.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.A1, self.A2, self.phi1, self.phi2])):
            raise DataError("forcing parameters must be finite")

    def at(self, t: float) -> np.ndarray:
        return np.array([
            self.A1 * np.sin(t + self.phi1) + self.A1 * np.sin(t / 10 + self.phi1),
            self.A2 * np.sin(t + self.phi2) + self.A2 * np.sin(t / 10 + self.phi2),
        ])

    def sample(self, N: int, dt: float) -> np.ndarray:
        t = np.arange(N) * dt
        u1 = self.A1 * np.sin(t + self.phi1) + self.A1 * np.sin(t / 10 + self.phi1)
        u2 = self.A2 * np.sin(t + self.phi2) + self.A2 * np.sin(t / 10 + self.phi2)
        return np.column_stack([u1, u2])


def _pp_rhs(params: PreyPredatorParams, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    x1, x2, x3 = x
    u1sq, u2sq = u[0] ** 2, u[1] ** 2
    return np.array([
        params.a1 * x1 - params.b1 * x1 * x2 - params.c1 * x1 * x3 + params.d1 * u1sq,
        params.a2 * x2 - params.b2 * x1 * x2 - params.c2 * x1 * x3 + params.d2 * u2sq,
        -params.e * x3 + params.f * x1 * x3 + params.g * x2 * x3,
    ])


def simulate_prey_predator(params: PreyPredatorParams, forcing: SinusoidalForcing,
                           N: int, seed: int = 0) -> Dataset:
    """Classical RK4 at step dt; inputs recorded as the raw sinusoids.

    The plant squares the inputs internally, so the recorded (u1, u2) -> x3
    map is genuinely nonlinear. The seed is accepted for interface symmetry
    with the other generator; generation itself is deterministic.
    """
    if N < 2:
        raise DataError(f"need at least 2 samples, got {N}")
    dt = params.dt
    x = np.array(params.x0, dtype=float)
    us = forcing.sample(N, dt)
    ys = np.empty((N, 1))
    for k in range(N):
        t = k * dt
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > POPULATION_BOUND:
            raise NumericalError(
                f"prey-predator simulation diverged at step {k} (t={t:.6g}); "
                "reduce dt or the forcing amplitude"
            )
        ys[k, 0] = x[2]
        k1 = _pp_rhs(params, x, forcing.at(t))
        k2 = _pp_rhs(params, x + 0.5 * dt * k1, forcing.at(t + 0.5 * dt))
        k3 = _pp_rhs(params, x + 0.5 * dt * k2, forcing.at(t + 0.5 * dt))
        k4 = _pp_rhs(params, x + dt * k3, forcing.at(t + dt))
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return Dataset(u=us, y=ys, dt=dt, name="prey-predator")


# --- Wiener-Hammerstein stand-in --------------------------------------------

def second_order_block(pole_re: float, pole_im: float) -> LinearSS:
    """SISO 2nd-order block with poles pole_re +/- i*pole_im, unit DC gain."""
    r2 = pole_re**2 + pole_im**2
    A = np.array([[2 * pole_re, -r2], [1.0, 0.0]])
    B = np.array([[1.0], [0.0]])
    C = np.array([[1.0, 0.0]])
    lin = LinearSS(A=A, B=B, C=C)
    dc = (lin.C @ np.linalg.solve(np.eye(2) - A, B)).item()
    if abs(dc) < 1e-12:
        raise NumericalError("block has (near-)zero DC gain; cannot normalize")
    return LinearSS(A=A, B=B, C=C / dc)


@dataclass(frozen=True)
class WhParams:
    """Static nonlinearity sandwiched between two stable SISO LTI blocks."""

    front: LinearSS
    back: LinearSS
    nl_kind: str = "tanh-poly"
    nl_c1: float = 1.0
    nl_c3: float = 0.5
    noise_std: float = 0.0

    def __post_init__(self):
        for name, blk in (("front", self.front), ("back", self.back)):
            if blk.n_inputs != 1 or blk.n_outputs != 1:
                raise DataError(f"{name} block must be SISO")
            if blk.spectral_radius() >= 1.0:
                raise NumericalError(
                    f"{name} block is not Schur stable "
                    f"(spectral radius {blk.spectral_radius():.6g})"
                )
        if self.nl_kind not in ("tanh-poly", "identity"):
            raise DataError(f"unknown nonlinearity kind {self.nl_kind!r}")
        if self.noise_std < 0:
            raise DataError(f"noise_std must be non-negative, got {self.noise_std}")

    def nonlinearity(self, z: np.ndarray) -> np.ndarray:
        if self.nl_kind == "identity":
            return z
        return np.tanh(self.nl_c1 * z + self.nl_c3 * z**3)


def default_wh_params(nl_kind: str = "tanh-poly", noise_std: float = 0.0) -> WhParams:
    return WhParams(
        front=second_order_block(0.7, 0.2),
        back=second_order_block(0.8, 0.1),
        nl_kind=nl_kind,
        noise_std=noise_std,
    )


@dataclass(frozen=True)
class WhInputSpec:
    """Seeded excitation: white noise through a one-pole lowpass, rescaled."""

    std: float = 1.0
    smoothing: float = 0.5

    def __post_init__(self):
        if self.std <= 0:
            raise DataError(f"input std must be positive, got {self.std}")
        if not (0 <= self.smoothing < 1):
            raise DataError(f"smoothing must lie in [0, 1), got {self.smoothing}")

    def sample(self, N: int, rng: np.random.Generator) -> np.ndarray:
        e = rng.normal(0.0, 1.0, N)
        u = np.empty(N)
        prev = 0.0
        a = self.smoothing
        for k in range(N):
            prev = a * prev + (1 - a) * e[k]
            u[k] = prev
        s = np.std(u)
        if s < 1e-12:
            raise NumericalError("degenerate input draw; increase N")
        return (u * (self.std / s)).reshape(-1, 1)


def generate_wh(params: WhParams, input_spec: WhInputSpec, N: int,
                seed: int = 0) -> Dataset:
    """u -> front LTI -> static nonlinearity -> back LTI (+ output noise)."""
    if N < 2:
        raise DataError(f"need at least 2 samples, got {N}")
    rng = np.random.default_rng(seed)
    u = input_spec.sample(N, rng)
    z1 = simulate(params.front, u).y
    z2 = params.nonlinearity(z1)
    y = simulate(params.back, z2).y
    if params.noise_std > 0:
        y = y + rng.normal(0.0, params.noise_std, size=y.shape)
    return Dataset(u=u, y=y, name="wh-synthetic")


# --- metadata helpers for file sidecars --------------------------------------

def pp_params_to_dict(params: PreyPredatorParams, forcing: SinusoidalForcing) -> dict:
    return {
        "system": "prey-predator",
        "a1": params.a1, "a2": params.a2, "b1": params.b1, "b2": params.b2,
        "c1": params.c1, "c2": params.c2, "d1": params.d1, "d2": params.d2,
        "e": params.e, "f": params.f, "g": params.g,
        "dt": params.dt, "x0": list(params.x0),
        "forcing": {"A1": forcing.A1, "A2": forcing.A2,
                    "phi1": forcing.phi1, "phi2": forcing.phi2},
    }


def wh_params_to_dict(params: WhParams, input_spec: WhInputSpec) -> dict:
    return {
        "system": "wh-synthetic",
        "front": {"A": params.front.A.tolist(), "B": params.front.B.tolist(),
                  "C": params.front.C.tolist()},
        "back": {"A": params.back.A.tolist(), "B": params.back.B.tolist(),
                 "C": params.back.C.tolist()},
        "nl_kind": params.nl_kind, "nl_c1": params.nl_c1, "nl_c3": params.nl_c3,
        "noise_std": params.noise_std,
        "input": {"std": input_spec.std, "smoothing": input_spec.smoothing},
    }
