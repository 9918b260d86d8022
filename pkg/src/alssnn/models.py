"""Model families and their one-step maps and free-run simulation.

Three families share the JSON schema (tag `family`):

* ``lti``      x+ = A x + B u
* ``gr-ssnn``  x+ = A x + B u + f(x, u)
* ``al-ssnn``  x+ = A x + B (u + h(y)) + g(x, u),  y = C x

The AL form splits the nonlinearity into an input-channel term B h(y),
cancellable by output feedback, and a residual g(x, u) that training keeps
small. Defining f(x, u) := B h(Cx) + g(x, u) recovers the GR step exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DataError
from .linear_id import LinearSS
from .nets import Equilibrium, Mlp, mlp_forward

__all__ = [
    "AlSsnnModel",
    "GrSsnnModel",
    "Trajectory",
    "al_step",
    "gr_step",
    "simulate",
    "save_model",
    "load_model",
    "DIVERGENCE_BOUND",
]

DIVERGENCE_BOUND = 1e8

AnyModel = Union["AlSsnnModel", "GrSsnnModel", LinearSS]


@dataclass(frozen=True)
class AlSsnnModel:
    """Approximately feedback-linearizable neural state-space model."""

    lin: LinearSS
    h_net: Mlp
    g_net: Mlp
    eq: Equilibrium
    c_frozen: bool = True

    def __post_init__(self):
        n, m, p = self.lin.n_states, self.lin.n_inputs, self.lin.n_outputs
        if self.h_net.d_in != p or self.h_net.d_out != m:
            raise DataError(
                f"h net must map R^{p} -> R^{m}, got R^{self.h_net.d_in} -> R^{self.h_net.d_out}"
            )
        if self.g_net.d_in != n + m or self.g_net.d_out != n:
            raise DataError(
                f"g net must map R^{n + m} -> R^{n}, got R^{self.g_net.d_in} -> R^{self.g_net.d_out}"
            )
        if self.eq.x_e.shape != (n,) or self.eq.u_e.shape != (m,):
            raise DataError("equilibrium dimensions do not match the linear part")

    @property
    def dims(self) -> dict:
        return {
            "n": self.lin.n_states,
            "m": self.lin.n_inputs,
            "p": self.lin.n_outputs,
            "n_h": self.h_net.n_hidden,
            "n_g": self.g_net.n_hidden,
        }


@dataclass(frozen=True)
class GrSsnnModel:
    """Baseline model with an unconstrained state nonlinearity f(x, u)."""

    lin: LinearSS
    f_net: Mlp

    def __post_init__(self):
        n, m = self.lin.n_states, self.lin.n_inputs
        if self.f_net.d_in != n + m or self.f_net.d_out != n:
            raise DataError(
                f"f net must map R^{n + m} -> R^{n}, got R^{self.f_net.d_in} -> R^{self.f_net.d_out}"
            )

    @property
    def dims(self) -> dict:
        return {
            "n": self.lin.n_states,
            "m": self.lin.n_inputs,
            "p": self.lin.n_outputs,
            "n_f": self.f_net.n_hidden,
        }


@dataclass(frozen=True)
class Trajectory:
    """Free-run result: states x(0..N), outputs y(0..N-1)."""

    x: np.ndarray
    y: np.ndarray
    diverged: bool = False
    diverged_at: int | None = None

    def __post_init__(self):
        if not self.diverged and self.x.shape[0] != self.y.shape[0] + 1:
            raise DataError(
                f"state sequence length {self.x.shape[0]} does not match "
                f"output length {self.y.shape[0]} + 1"
            )


def _lin_of(model: AnyModel) -> LinearSS:
    return model if isinstance(model, LinearSS) else model.lin


def al_step(model: AlSsnnModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One step A x + B(u + h(Cx)) + g(x, u)."""
    lin = model.lin
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape != (lin.n_states,) or u.shape != (lin.n_inputs,):
        raise DataError(
            f"state/input shapes {x.shape}/{u.shape} do not match model dims "
            f"({lin.n_states},)/({lin.n_inputs},)"
        )
    y = lin.C @ x
    h = mlp_forward(model.h_net, y)
    g = mlp_forward(model.g_net, np.concatenate([x, u]))
    return lin.A @ x + lin.B @ (u + h) + g


def gr_step(model: GrSsnnModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One step A x + B u + f(x, u)."""
    lin = model.lin
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape != (lin.n_states,) or u.shape != (lin.n_inputs,):
        raise DataError(
            f"state/input shapes {x.shape}/{u.shape} do not match model dims "
            f"({lin.n_states},)/({lin.n_inputs},)"
        )
    f = mlp_forward(model.f_net, np.concatenate([x, u]))
    return lin.A @ x + lin.B @ u + f


def _step_fn(model: AnyModel):
    if isinstance(model, AlSsnnModel):
        return lambda x, u: al_step(model, x, u)
    if isinstance(model, GrSsnnModel):
        return lambda x, u: gr_step(model, x, u)
    if isinstance(model, LinearSS):
        A, B = model.A, model.B
        return lambda x, u: A @ x + B @ u
    raise DataError(f"unsupported model type {type(model).__name__}")


def simulate(model: AnyModel, u_seq: np.ndarray, x0: np.ndarray | None = None,
             divergence_bound: float = DIVERGENCE_BOUND) -> Trajectory:
    """Free-run simulation driven by recorded inputs only.

    y(k) = C x(k) is the output before the state update, so the input
    nonlinearity sees the current output. If the state norm ever exceeds
    the bound the trajectory is truncated and flagged instead of
    propagating overflow.
    """
    lin = _lin_of(model)
    n, m, p = lin.n_states, lin.n_inputs, lin.n_outputs
    U = np.asarray(u_seq, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, 1)
    if U.shape[0] < 1 or U.shape[1] != m:
        raise DataError(f"input sequence has shape {U.shape}, expected (N, {m})")
    N = U.shape[0]
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (n,):
        raise DataError(f"x0 has shape {x.shape}, expected ({n},)")
    step = _step_fn(model)
    xs = np.empty((N + 1, n))
    ys = np.empty((N, p))
    xs[0] = x
    for k in range(N):
        if np.linalg.norm(x) > divergence_bound:
            return Trajectory(
                x=xs[: k + 1].copy(), y=ys[:k].copy(), diverged=True, diverged_at=k
            )
        ys[k] = lin.C @ x
        x = step(x, U[k])
        xs[k + 1] = x
    if np.linalg.norm(x) > divergence_bound:
        return Trajectory(x=xs[:N].copy(), y=ys[: N - 1].copy(), diverged=True,
                          diverged_at=N)
    return Trajectory(x=xs, y=ys)


# --- JSON persistence -------------------------------------------------------

def _net_to_json(net: Mlp) -> dict:
    return {
        "w_in": net.W_in.tolist(),
        "b_in": net.b_in.tolist(),
        "w_out": net.W_out.tolist(),
        "b_out": net.b_out.tolist(),
        "activation": net.activation,
    }


def _net_from_json(obj: dict, what: str, d_in: int, d_out: int) -> Mlp:
    for key in ("w_in", "b_in", "w_out", "b_out"):
        if key not in obj:
            raise DataError(f"model file: {what} is missing field {key!r}")
    n_hidden = len(obj["b_in"])
    return Mlp(
        W_in=np.array(obj["w_in"], dtype=float).reshape(n_hidden, d_in),
        b_in=np.array(obj["b_in"], dtype=float).reshape(n_hidden),
        W_out=np.array(obj["w_out"], dtype=float).reshape(d_out, n_hidden),
        b_out=np.array(obj["b_out"], dtype=float).reshape(d_out),
        activation=obj.get("activation", "tanh"),
    )


def model_to_json_dict(model: AnyModel) -> dict:
    lin = _lin_of(model)
    base = {
        "A": lin.A.tolist(),
        "B": lin.B.tolist(),
        "C": lin.C.tolist(),
    }
    if isinstance(model, AlSsnnModel):
        return {
            "family": "al-ssnn",
            "dims": model.dims,
            **base,
            "h_net": _net_to_json(model.h_net),
            "g_net": _net_to_json(model.g_net),
            "equilibrium": {"x_e": model.eq.x_e.tolist(), "u_e": model.eq.u_e.tolist()},
            "c_frozen": model.c_frozen,
        }
    if isinstance(model, GrSsnnModel):
        return {
            "family": "gr-ssnn",
            "dims": model.dims,
            **base,
            "f_net": _net_to_json(model.f_net),
        }
    if isinstance(model, LinearSS):
        return {
            "family": "lti",
            "dims": {"n": lin.n_states, "m": lin.n_inputs, "p": lin.n_outputs},
            **base,
        }
    raise DataError(f"unsupported model type {type(model).__name__}")


def model_from_json_dict(obj: dict) -> AnyModel:
    family = obj.get("family")
    if family not in ("al-ssnn", "gr-ssnn", "lti"):
        raise DataError(f"model file: unknown family tag {family!r}")
    for key in ("A", "B", "C", "dims"):
        if key not in obj:
            raise DataError(f"model file: missing field {key!r}")
    dims = obj["dims"]
    n = int(dims["n"])
    lin = LinearSS(
        A=np.array(obj["A"], dtype=float).reshape(n, n),
        B=np.array(obj["B"], dtype=float).reshape(n, -1),
        C=np.array(obj["C"], dtype=float).reshape(-1, n),
    )
    if family == "lti":
        return lin
    m, p = lin.n_inputs, lin.n_outputs
    if family == "gr-ssnn":
        if "f_net" not in obj:
            raise DataError("model file: gr-ssnn requires field 'f_net'")
        return GrSsnnModel(lin=lin, f_net=_net_from_json(obj["f_net"], "f_net", n + m, n))
    for key in ("h_net", "g_net", "equilibrium"):
        if key not in obj:
            raise DataError(f"model file: al-ssnn requires field {key!r}")
    eq = Equilibrium(
        x_e=np.array(obj["equilibrium"]["x_e"], dtype=float),
        u_e=np.array(obj["equilibrium"]["u_e"], dtype=float),
    )
    return AlSsnnModel(
        lin=lin,
        h_net=_net_from_json(obj["h_net"], "h_net", p, m),
        g_net=_net_from_json(obj["g_net"], "g_net", n + m, n),
        eq=eq,
        c_frozen=bool(obj.get("c_frozen", True)),
    )


def save_model(model: AnyModel, path) -> None:
    """Write the model as JSON; floats use repr so round trips are bit-exact."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> AnyModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    return model_from_json_dict(obj)
