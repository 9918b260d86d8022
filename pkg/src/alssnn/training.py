"""Simulation-error training: residuals, exact Jacobian, Levenberg-Marquardt.

The loss on a dataset of N samples is

    J_N = (1/N) * sum_k [ ||y(k) - y_model(k)||^2 + gamma * ||g(x(k), u(k))||^2 ]

with x(k) from a free run started at x(0) = 0. The residual vector stacks all
N*p output errors first, then the N*n penalty values scaled by sqrt(gamma),
so J_N = ||r||^2 / N exactly. Jacobians are exact (forward accumulation of
state sensitivities through the recursion), which keeps Levenberg-Marquardt
steps cheap and reliable at these problem sizes.

Models without the h/g split (the f-net baseline) train through the same
machinery with the penalty block absent.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Union

import numpy as np

from .dataio import Dataset
from .errors import DataError, DivergenceError
from .linear_id import LinearSS, linear_init
from .models import AlSsnnModel, GrSsnnModel, simulate
from .nets import Equilibrium, Mlp, enforce_equilibrium_zero, init_small, mlp_forward_batch

__all__ = [
    "TrainConfig",
    "ResidualVector",
    "ParamLayout",
    "TrainReport",
    "LmWorkspace",
    "default_layout",
    "make_layout",
    "pack_params",
    "unpack_params",
    "residuals",
    "loss",
    "jacobian_bptt",
    "lm_step",
    "train",
    "train_gr",
    "report_to_json_dict",
]

TrainableModel = Union[AlSsnnModel, GrSsnnModel]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the identification pipeline."""

    gamma: float = 1.0
    max_iters: int = 300
    n_h: int = 10
    n_g: int = 10
    lambda0: float = 1e-2
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    grad_tol: float = 1e-10
    step_tol: float = 0.0
    loss_tol: float = 1e-10
    seed: int = 0
    freeze_C: bool = True
    enforce_equilibrium: bool = True
    horizon: int | None = None
    scale_hidden_inputs: bool = True
    # Multipliers on the freshly drawn input layer. Output weights start at
    # zero, so these cost nothing at iteration 0, but they set the basis the
    # optimizer gets to combine: wider input weights and, above all, nonzero
    # biases expose tanh curvature (even terms need bias offsets; an odd
    # function of a zero-mean signal cannot produce them).
    hidden_gain: float = 2.0
    hidden_bias_scale: float = 3.0

    def __post_init__(self):
        if self.gamma < 0:
            raise DataError(f"gamma must be non-negative, got {self.gamma}")
        if self.max_iters < 1:
            raise DataError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.lambda0 > 0 and np.isfinite(self.lambda0)):
            raise DataError(f"lambda0 must be positive, got {self.lambda0}")
        if not (self.lambda_up > 1 and np.isfinite(self.lambda_up)):
            raise DataError(f"lambda_up must exceed 1, got {self.lambda_up}")
        if not (0 < self.lambda_down < 1):
            raise DataError(f"lambda_down must lie in (0, 1), got {self.lambda_down}")
        for name in ("grad_tol", "step_tol", "loss_tol"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be non-negative")
        if self.n_h < 0 or self.n_g < 0:
            raise DataError("hidden sizes must be non-negative")
        if self.horizon is not None and self.horizon < 1:
            raise DataError(f"horizon must be >= 1, got {self.horizon}")
        if not (self.hidden_gain > 0 and np.isfinite(self.hidden_gain)):
            raise DataError(f"hidden_gain must be positive, got {self.hidden_gain}")
        if not (self.hidden_bias_scale > 0 and np.isfinite(self.hidden_bias_scale)):
            raise DataError(
                f"hidden_bias_scale must be positive, got {self.hidden_bias_scale}")


@dataclass(frozen=True)
class ResidualVector:
    """Stacked residuals: N*p output errors, then N*n_penalty penalty terms."""

    r: np.ndarray
    n_samples: int
    n_outputs: int
    n_penalty_states: int

    def __post_init__(self):
        want = self.n_samples * (self.n_outputs + self.n_penalty_states)
        if self.r.shape != (want,):
            raise DataError(f"residual vector length {self.r.shape} != ({want},)")

    @property
    def output_block(self) -> np.ndarray:
        return self.r[: self.n_samples * self.n_outputs].reshape(
            self.n_samples, self.n_outputs
        )

    @property
    def penalty_block(self) -> np.ndarray:
        return self.r[self.n_samples * self.n_outputs :].reshape(
            self.n_samples, self.n_penalty_states
        )

    def loss_value(self) -> float:
        return float(self.r @ self.r / self.n_samples)

    def components(self) -> tuple[float, float]:
        """(output mse, penalty mse), each already divided by N."""
        cut = self.n_samples * self.n_outputs
        out = float(self.r[:cut] @ self.r[:cut] / self.n_samples)
        pen = float(self.r[cut:] @ self.r[cut:] / self.n_samples)
        return out, pen


# --- parameter layout -------------------------------------------------------

_NET_SUFFIXES = ("W_in", "b_in", "W_out", "b_out")


def _catalog(model: TrainableModel) -> list[tuple[str, int]]:
    """Canonical (block name, size) order for the model's free parameters."""
    lin = model.lin
    n, m, p = lin.n_states, lin.n_inputs, lin.n_outputs
    out = [("A", n * n), ("B", n * m), ("C", p * n)]
    if isinstance(model, AlSsnnModel):
        nets = [("h", model.h_net), ("g", model.g_net)]
    elif isinstance(model, GrSsnnModel):
        nets = [("f", model.f_net)]
    else:
        raise DataError(f"unsupported model type {type(model).__name__}")
    for tag, net in nets:
        h, d_in, d_out = net.n_hidden, net.d_in, net.d_out
        out += [
            (f"{tag}.W_in", h * d_in),
            (f"{tag}.b_in", h),
            (f"{tag}.W_out", d_out * h),
            (f"{tag}.b_out", d_out),
        ]
    return out


@dataclass(frozen=True)
class ParamLayout:
    """Ordered subset of parameter blocks exposed to the optimizer.

    eq_constrained marks g's output bias as a dependent quantity: it is
    recomputed after every unpack so g(x_e, u_e) = 0 holds exactly, and the
    Jacobian uses the correspondingly corrected columns.
    """

    blocks: tuple[str, ...]
    eq_constrained: bool = False

    def __post_init__(self):
        if len(set(self.blocks)) != len(self.blocks):
            raise DataError("layout contains duplicate blocks")
        if len(self.blocks) == 0:
            raise DataError("layout must expose at least one block")
        if self.eq_constrained and "g.b_out" in self.blocks:
            raise DataError(
                "g.b_out cannot be a free parameter while the equilibrium "
                "constraint determines it"
            )


def make_layout(model: TrainableModel, names, eq_constrained: bool = False) -> ParamLayout:
    """Layout from a set of block names, normalized to canonical order."""
    known = [name for name, _ in _catalog(model)]
    wanted = set(names)
    unknown = wanted - set(known)
    if unknown:
        raise DataError(f"unknown parameter blocks: {sorted(unknown)}")
    if eq_constrained and not isinstance(model, AlSsnnModel):
        raise DataError("equilibrium constraint applies only to models with a g net")
    return ParamLayout(
        blocks=tuple(name for name in known if name in wanted),
        eq_constrained=eq_constrained,
    )


def default_layout(model: TrainableModel, config: TrainConfig) -> ParamLayout:
    """A and B free, C per freeze flag, all net weights except the constrained bias."""
    names = ["A", "B"]
    if not config.freeze_C:
        names.append("C")
    if isinstance(model, AlSsnnModel):
        names += [f"h.{s}" for s in _NET_SUFFIXES]
        names += [f"g.{s}" for s in _NET_SUFFIXES]
        if config.enforce_equilibrium:
            names.remove("g.b_out")
        return make_layout(model, names, eq_constrained=config.enforce_equilibrium)
    names += [f"f.{s}" for s in _NET_SUFFIXES]
    return make_layout(model, names)


def _layout_slices(model: TrainableModel, layout: ParamLayout) -> tuple[dict, int]:
    sizes = dict(_catalog(model))
    cols = {}
    off = 0
    for name in layout.blocks:
        cols[name] = slice(off, off + sizes[name])
        off += sizes[name]
    return cols, off


def _block_array(model: TrainableModel, name: str) -> np.ndarray:
    if name in ("A", "B", "C"):
        return getattr(model.lin, name)
    tag, suffix = name.split(".")
    net = {"h": "h_net", "g": "g_net", "f": "f_net"}[tag]
    return getattr(getattr(model, net), suffix)


def pack_params(model: TrainableModel, layout: ParamLayout) -> np.ndarray:
    return np.concatenate([_block_array(model, b).ravel() for b in layout.blocks])


def unpack_params(model: TrainableModel, layout: ParamLayout,
                  theta: np.ndarray) -> TrainableModel:
    """Rebuild the model from a flat parameter vector.

    Blocks outside the layout keep their current values; when the layout is
    equilibrium-constrained, g's output bias is recomputed afterwards.
    """
    cols, total = _layout_slices(model, layout)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape != (total,):
        raise DataError(f"parameter vector length {theta.shape[0]} != {total}")
    new = {name: theta[sl] for name, sl in cols.items()}

    lin = model.lin
    lin_updates = {}
    for name in ("A", "B", "C"):
        if name in new:
            lin_updates[name] = new[name].reshape(getattr(lin, name).shape)
    if lin_updates:
        lin = replace(lin, **lin_updates)

    def rebuild(net: Mlp, tag: str) -> Mlp:
        updates = {}
        for suffix in _NET_SUFFIXES:
            key = f"{tag}.{suffix}"
            if key in new:
                updates[suffix] = new[key].reshape(getattr(net, suffix).shape)
        return replace(net, **updates) if updates else net

    if isinstance(model, AlSsnnModel):
        g_net = rebuild(model.g_net, "g")
        if layout.eq_constrained:
            g_net = enforce_equilibrium_zero(g_net, model.eq)
        return replace(model, lin=lin, h_net=rebuild(model.h_net, "h"), g_net=g_net)
    return replace(model, lin=lin, f_net=rebuild(model.f_net, "f"))


# --- residuals and loss -----------------------------------------------------

def _free_run_states(model, ds: Dataset) -> np.ndarray:
    traj = simulate(model, ds.u)
    if traj.diverged:
        raise DivergenceError(traj.diverged_at)
    return traj.x


def residuals(model: TrainableModel, ds: Dataset, gamma: float = 0.0) -> ResidualVector:
    """Stacked residual vector from a free run at x(0) = 0."""
    lin = model.lin
    if ds.n_inputs != lin.n_inputs or ds.n_outputs != lin.n_outputs:
        raise DataError(
            f"dataset dims (m={ds.n_inputs}, p={ds.n_outputs}) do not match model "
            f"(m={lin.n_inputs}, p={lin.n_outputs})"
        )
    xs = _free_run_states(model, ds)
    N = ds.n_samples
    e = ds.y - xs[:N] @ lin.C.T
    if isinstance(model, AlSsnnModel):
        if gamma < 0:
            raise DataError(f"gamma must be non-negative, got {gamma}")
        Z = np.hstack([xs[:N], ds.u])
        gvals = mlp_forward_batch(model.g_net, Z)
        r = np.concatenate([e.ravel(), np.sqrt(gamma) * gvals.ravel()])
        return ResidualVector(r=r, n_samples=N, n_outputs=lin.n_outputs,
                              n_penalty_states=lin.n_states)
    r = e.ravel()
    return ResidualVector(r=r, n_samples=N, n_outputs=lin.n_outputs,
                          n_penalty_states=0)


def loss(model: TrainableModel, ds: Dataset, gamma: float = 0.0) -> float:
    """J_N, identically ||residuals||^2 / N."""
    return residuals(model, ds, gamma).loss_value()


# --- Jacobian by forward sensitivity accumulation ---------------------------

def _batch_param_blocks(net: Mlp, Z: np.ndarray, t: np.ndarray, s: np.ndarray,
                        wanted) -> dict:
    """Per-sample Jacobians of the net output w.r.t. each parameter block.

    Returns name -> array of shape (N, d_out, block size), columns matching
    the flat row-major order used by pack_params.
    """
    N = Z.shape[0]
    h, d_in, d_out = net.n_hidden, net.d_in, net.d_out
    out = {}
    ws = s[:, None, :] * net.W_out[None, :, :]          # (N, d_out, h)
    if "W_in" in wanted:
        out["W_in"] = np.einsum("kor,kc->korc", ws, Z).reshape(N, d_out, h * d_in)
    if "b_in" in wanted:
        out["b_in"] = ws
    if "W_out" in wanted:
        out["W_out"] = np.einsum("oq,kr->koqr", np.eye(d_out), t).reshape(
            N, d_out, d_out * h
        )
    if "b_out" in wanted:
        out["b_out"] = np.broadcast_to(np.eye(d_out), (N, d_out, d_out))
    return out


def _tanh_stats(net: Mlp, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.tanh(Z @ net.W_in.T + net.b_in)
    return t, 1.0 - t**2


def jacobian_bptt(model: TrainableModel, ds: Dataset, gamma: float = 0.0,
                  layout: ParamLayout | None = None) -> np.ndarray:
    """Exact residual Jacobian, shape (N*(p [+ n]), P).

    State sensitivities follow S(k+1) = F_x(k) S(k) + F_theta(k) with
    S(0) = 0 (the initial state is fixed, not a parameter); output rows are
    -C S(k) plus the direct C term when C is free, penalty rows are
    sqrt(gamma) * (dg/dx S(k) + dg/dtheta_g).
    """
    if layout is None:
        layout = default_layout(
            model,
            TrainConfig(
                freeze_C=getattr(model, "c_frozen", True), enforce_equilibrium=True
            ),
        )
    if isinstance(model, AlSsnnModel):
        return _jacobian_al(model, ds, gamma, layout)
    return _jacobian_gr(model, ds, layout)


def _jacobian_al(model: AlSsnnModel, ds: Dataset, gamma: float,
                 layout: ParamLayout) -> np.ndarray:
    lin, h_net, g_net = model.lin, model.h_net, model.g_net
    A, B, C = lin.A, lin.B, lin.C
    n, m, p = lin.n_states, lin.n_inputs, lin.n_outputs
    N = ds.n_samples
    sqrt_g = np.sqrt(gamma)

    xs = _free_run_states(model, ds)
    X, U = xs[:N], ds.u
    Y = X @ C.T
    Z = np.hstack([X, U])

    th, sh = _tanh_stats(h_net, Y)
    tg, sg = _tanh_stats(g_net, Z)
    h_val = th @ h_net.W_out.T + h_net.b_out
    Hy = (sh[:, None, :] * h_net.W_out[None, :, :]) @ h_net.W_in    # (N, m, p)
    Gz = (sg[:, None, :] * g_net.W_out[None, :, :]) @ g_net.W_in    # (N, n, n+m)
    Gx = Gz[:, :, :n]
    BH = np.matmul(B, Hy)                                           # (N, n, p)
    Fx = A[None, :, :] + np.matmul(BH, C) + Gx

    cols, P = _layout_slices(model, layout)
    F = np.zeros((N, n, P))
    eye_n = np.eye(n)
    if "A" in cols:
        F[:, :, cols["A"]] = np.einsum("ab,kj->kabj", eye_n, X).reshape(N, n, n * n)
    if "B" in cols:
        F[:, :, cols["B"]] = np.einsum("ab,kj->kabj", eye_n, U + h_val).reshape(
            N, n, n * m
        )
    D_out = None
    if "C" in cols:
        F[:, :, cols["C"]] = np.einsum("kai,kj->kaij", BH, X).reshape(N, n, p * n)
        D_out = np.einsum("ai,kj->kaij", np.eye(p), X).reshape(N, p, p * n)

    h_wanted = [s for s in _NET_SUFFIXES if f"h.{s}" in cols]
    if h_wanted:
        hb = _batch_param_blocks(h_net, Y, th, sh, h_wanted)
        for suffix in h_wanted:
            F[:, :, cols[f"h.{suffix}"]] = np.matmul(B, hb[suffix])

    g_wanted = [s for s in _NET_SUFFIXES if f"g.{s}" in cols]
    Dg = None
    g_span = None
    if g_wanted:
        gb = _batch_param_blocks(g_net, Z, tg, sg, g_wanted)
        if layout.eq_constrained:
            # b_out eliminated: effective g is g_raw(z) - g_raw(z_e), so every
            # remaining column gets the equilibrium-point jacobian subtracted.
            z_e = model.eq.stacked()[None, :]
            t_e, s_e = _tanh_stats(g_net, z_e)
            gb0 = _batch_param_blocks(g_net, z_e, t_e, s_e, g_wanted)
            gb = {k: gb[k] - gb0[k] for k in gb}
        for suffix in g_wanted:
            F[:, :, cols[f"g.{suffix}"]] = gb[suffix]
        spans = [cols[f"g.{suffix}"] for suffix in g_wanted]
        g_span = slice(spans[0].start, spans[-1].stop)
        if sum(sl.stop - sl.start for sl in spans) != g_span.stop - g_span.start:
            raise AssertionError("g parameter blocks must be contiguous in the layout")
        Dg = sqrt_g * np.concatenate([gb[suffix] for suffix in g_wanted], axis=2)

    S = np.zeros((n, P))
    J_out = np.empty((N, p, P))
    J_pen = np.empty((N, n, P))
    c_sl = cols.get("C")
    for k in range(N):
        np.negative(C @ S, out=J_out[k])
        if c_sl is not None:
            J_out[k, :, c_sl] -= D_out[k]
        np.multiply(sqrt_g, Gx[k] @ S, out=J_pen[k])
        if g_span is not None:
            J_pen[k, :, g_span] += Dg[k]
        S = Fx[k] @ S + F[k]
    return np.concatenate([J_out.reshape(N * p, P), J_pen.reshape(N * n, P)], axis=0)


def _jacobian_gr(model: GrSsnnModel, ds: Dataset, layout: ParamLayout) -> np.ndarray:
    lin, f_net = model.lin, model.f_net
    A, B, C = lin.A, lin.B, lin.C
    n, m, p = lin.n_states, lin.n_inputs, lin.n_outputs
    N = ds.n_samples

    xs = _free_run_states(model, ds)
    X, U = xs[:N], ds.u
    Z = np.hstack([X, U])
    tf, sf = _tanh_stats(f_net, Z)
    Fz = (sf[:, None, :] * f_net.W_out[None, :, :]) @ f_net.W_in    # (N, n, n+m)
    Fx = A[None, :, :] + Fz[:, :, :n]

    cols, P = _layout_slices(model, layout)
    F = np.zeros((N, n, P))
    eye_n = np.eye(n)
    if "A" in cols:
        F[:, :, cols["A"]] = np.einsum("ab,kj->kabj", eye_n, X).reshape(N, n, n * n)
    if "B" in cols:
        F[:, :, cols["B"]] = np.einsum("ab,kj->kabj", eye_n, U).reshape(N, n, n * m)
    D_out = None
    if "C" in cols:
        # C does not enter the state recursion here, only the output map.
        D_out = np.einsum("ai,kj->kaij", np.eye(p), X).reshape(N, p, p * n)
    f_wanted = [s for s in _NET_SUFFIXES if f"f.{s}" in cols]
    if f_wanted:
        fb = _batch_param_blocks(f_net, Z, tf, sf, f_wanted)
        for suffix in f_wanted:
            F[:, :, cols[f"f.{suffix}"]] = fb[suffix]

    S = np.zeros((n, P))
    J_out = np.empty((N, p, P))
    c_sl = cols.get("C")
    for k in range(N):
        np.negative(C @ S, out=J_out[k])
        if c_sl is not None:
            J_out[k, :, c_sl] -= D_out[k]
        S = Fx[k] @ S + F[k]
    return J_out.reshape(N * p, P)


# --- Levenberg-Marquardt ----------------------------------------------------

@dataclass
class LmWorkspace:
    """Cache shared across lm_step calls while the model is unchanged.

    Callers must leave `valid` alone; lm_step refills the cache whenever it
    is invalid and invalidates it again on an accepted step.
    """

    valid: bool = False
    loss: float = float("nan")
    grad_inf: float = float("nan")
    output_mse: float = float("nan")
    penalty_mse: float = float("nan")
    JtJ: np.ndarray | None = None
    Jtr: np.ndarray | None = None
    last_candidate_loss: float | None = None
    last_candidate_components: tuple[float, float] | None = None
    last_step_norm: float | None = None


def lm_step(model: TrainableModel, ds: Dataset, config: TrainConfig, lam: float,
            layout: ParamLayout | None = None,
            workspace: LmWorkspace | None = None):
    """One damped Gauss-Newton step with strict-decrease acceptance.

    Solves (J'J + lam*diag(J'J)) delta = -J'r, zero diagonal entries replaced
    by 1. Returns (model', lam', accepted); the model is returned unchanged
    on rejection and lam moves by the configured factors. Solve failures and
    divergent candidates count as rejections.
    """
    if layout is None:
        layout = default_layout(model, config)
    ws = workspace if workspace is not None else LmWorkspace()
    if not ws.valid:
        rv = residuals(model, ds, config.gamma)
        J = jacobian_bptt(model, ds, config.gamma, layout=layout)
        ws.loss = rv.loss_value()
        ws.output_mse, ws.penalty_mse = rv.components()
        ws.JtJ = J.T @ J
        ws.Jtr = J.T @ rv.r
        ws.grad_inf = float(np.max(np.abs(2.0 / ds.n_samples * ws.Jtr)))
        ws.valid = True

    ws.last_candidate_loss = None
    ws.last_candidate_components = None
    ws.last_step_norm = None

    damping = np.diag(ws.JtJ).copy()
    damping[damping == 0.0] = 1.0
    try:
        delta = np.linalg.solve(ws.JtJ + lam * np.diag(damping), -ws.Jtr)
    except np.linalg.LinAlgError:
        return model, lam * config.lambda_up, False
    if not np.all(np.isfinite(delta)):
        return model, lam * config.lambda_up, False

    ws.last_step_norm = float(np.linalg.norm(delta))
    try:
        candidate = unpack_params(model, layout, pack_params(model, layout) + delta)
        rv_c = residuals(candidate, ds, config.gamma)
    except (DataError, DivergenceError):
        return model, lam * config.lambda_up, False
    loss_c = rv_c.loss_value()
    ws.last_candidate_loss = loss_c
    ws.last_candidate_components = rv_c.components()
    if loss_c < ws.loss:
        ws.valid = False
        return candidate, lam * config.lambda_down, True
    return model, lam * config.lambda_up, False


# --- training pipelines -----------------------------------------------------

@dataclass
class TrainReport:
    family: str
    dims: dict
    config: dict
    input_scaling: dict
    init_loss: float
    final_loss: float
    final_output_mse: float
    final_penalty_mse: float
    rmse_train: float
    n_iterations: int
    n_accepted: int
    stop_reason: str
    iterations: list = field(default_factory=list)
    wall_time_s: float = 0.0


def report_to_json_dict(report: TrainReport, include_timing: bool = False) -> dict:
    """Report as a JSON-ready dict; wall time is opt-in so identical runs
    serialize identically."""
    d = asdict(report)
    if not include_timing:
        d.pop("wall_time_s")
    return d


def _hidden_input_scales(lin0: LinearSS, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel stds of the net inputs along the linear-init free run.

    Dividing the input-layer columns by these keeps tanh units out of
    saturation whatever the physical units of the data are. The state
    channels are floored at output-scale / max|C| (times 0.1): when the
    initializer's B is nearly zero the init free run is vanishingly small,
    but a model that explains the output must carry states of roughly that
    magnitude, and scaling to the tiny init states would saturate the input
    layer the moment training grows them.
    """
    traj = simulate(lin0, ds.u)
    K = min(traj.x.shape[0], ds.n_samples)
    Z = np.hstack([traj.x[:K], ds.u[:K]])
    y_scale = ds.y.std(axis=0)
    z_scale = Z.std(axis=0)
    n = lin0.n_states
    floor = 0.1 * float(y_scale.max()) / max(float(np.max(np.abs(lin0.C))), 1e-12)
    z_scale[:n] = np.maximum(z_scale[:n], floor)
    y_scale[y_scale < 1e-9] = 1.0
    z_scale[z_scale < 1e-9] = 1.0
    return y_scale, z_scale


def _scale_input_layer(net: Mlp, scale: np.ndarray) -> Mlp:
    return replace(net, W_in=net.W_in / scale[None, :])


def _enrich_basis(net: Mlp, config: TrainConfig) -> Mlp:
    return replace(net, W_in=net.W_in * config.hidden_gain,
                   b_in=net.b_in * config.hidden_bias_scale)


def _run_lm(model: TrainableModel, ds: Dataset, config: TrainConfig,
            layout: ParamLayout):
    ws = LmWorkspace()
    lam = config.lambda0
    rv0 = residuals(model, ds, config.gamma)
    init_loss = rv0.loss_value()
    cur_loss = init_loss
    cur_out, cur_pen = rv0.components()
    accepted_losses = [init_loss]
    records = []
    stop_reason = "max_iters"
    n_accepted = 0
    for it in range(1, config.max_iters + 1):
        model_next, lam, accepted = lm_step(
            model, ds, config, lam, layout=layout, workspace=ws
        )
        if accepted:
            model = model_next
            n_accepted += 1
            cur_loss = ws.last_candidate_loss
            cur_out, cur_pen = ws.last_candidate_components
            accepted_losses.append(cur_loss)
        records.append({
            "iteration": it,
            "loss": cur_loss,
            "output_mse": cur_out,
            "penalty_mse": cur_pen,
            "lambda": lam,
            "accepted": accepted,
            "grad_inf": ws.grad_inf,
        })
        if ws.grad_inf < config.grad_tol:
            stop_reason = "grad_tol"
            break
        if accepted and len(accepted_losses) >= 11:
            old, newest = accepted_losses[-11], accepted_losses[-1]
            if old - newest < config.loss_tol * max(old, 1e-300):
                stop_reason = "loss_tol"
                break
        if accepted and config.step_tol > 0:
            ref = np.linalg.norm(pack_params(model, layout)) + config.step_tol
            if ws.last_step_norm <= config.step_tol * ref:
                stop_reason = "step_tol"
                break
    return model, {
        "init_loss": init_loss,
        "final_loss": cur_loss,
        "final_output_mse": cur_out,
        "final_penalty_mse": cur_pen,
        "records": records,
        "stop_reason": stop_reason,
        "n_accepted": n_accepted,
    }


def train(ds_train: Dataset, n: int, config: TrainConfig) -> tuple[AlSsnnModel, TrainReport]:
    """Full identification pipeline for the h/g-split model.

    Linear init fixes the starting (A, B, C); both nets start as exact zero
    functions, so iteration 0 reproduces the linear model's loss. C stays at
    its initial value when freeze_C is set. The returned loss never exceeds
    the initialization's (steps are only ever accepted on strict decrease).
    """
    t0 = time.perf_counter()
    lin0 = linear_init(ds_train, n, config.horizon)
    m, p = ds_train.n_inputs, ds_train.n_outputs
    h_net = _enrich_basis(init_small(p, config.n_h, m, scale=0.0, seed=config.seed), config)
    g_net = _enrich_basis(init_small(n + m, config.n_g, n, scale=0.0, seed=config.seed + 1),
                          config)
    scaling = {"h_input_scale": [1.0] * p, "g_input_scale": [1.0] * (n + m)}
    if config.scale_hidden_inputs:
        y_scale, z_scale = _hidden_input_scales(lin0, ds_train)
        h_net = _scale_input_layer(h_net, y_scale)
        g_net = _scale_input_layer(g_net, z_scale)
        scaling = {
            "h_input_scale": [float(v) for v in y_scale],
            "g_input_scale": [float(v) for v in z_scale],
        }
    eq = Equilibrium(x_e=np.zeros(n), u_e=np.zeros(m))
    if config.enforce_equilibrium:
        g_net = enforce_equilibrium_zero(g_net, eq)
    model = AlSsnnModel(lin=lin0, h_net=h_net, g_net=g_net, eq=eq,
                        c_frozen=config.freeze_C)
    layout = default_layout(model, config)
    model, stats = _run_lm(model, ds_train, config, layout)
    if config.enforce_equilibrium:
        model = replace(model, g_net=enforce_equilibrium_zero(model.g_net, model.eq))
    report = TrainReport(
        family="al-ssnn",
        dims=model.dims,
        config=asdict(config),
        input_scaling=scaling,
        init_loss=stats["init_loss"],
        final_loss=stats["final_loss"],
        final_output_mse=stats["final_output_mse"],
        final_penalty_mse=stats["final_penalty_mse"],
        rmse_train=float(np.sqrt(stats["final_output_mse"])),
        n_iterations=len(stats["records"]),
        n_accepted=stats["n_accepted"],
        stop_reason=stats["stop_reason"],
        iterations=stats["records"],
        wall_time_s=time.perf_counter() - t0,
    )
    return model, report


def train_gr(ds_train: Dataset, n: int, n_f: int,
             config: TrainConfig) -> tuple[GrSsnnModel, TrainReport]:
    """Baseline pipeline: single f net, no penalty term, C frozen the same way."""
    t0 = time.perf_counter()
    lin0 = linear_init(ds_train, n, config.horizon)
    m = ds_train.n_inputs
    f_net = _enrich_basis(init_small(n + m, n_f, n, scale=0.0, seed=config.seed + 1), config)
    scaling = {"f_input_scale": [1.0] * (n + m)}
    if config.scale_hidden_inputs:
        _, z_scale = _hidden_input_scales(lin0, ds_train)
        f_net = _scale_input_layer(f_net, z_scale)
        scaling = {"f_input_scale": [float(v) for v in z_scale]}
    model = GrSsnnModel(lin=lin0, f_net=f_net)
    names = ["A", "B"] + ([] if config.freeze_C else ["C"])
    names += [f"f.{s}" for s in _NET_SUFFIXES]
    layout = make_layout(model, names)
    model, stats = _run_lm(model, ds_train, config, layout)
    report = TrainReport(
        family="gr-ssnn",
        dims=model.dims,
        config=asdict(config),
        input_scaling=scaling,
        init_loss=stats["init_loss"],
        final_loss=stats["final_loss"],
        final_output_mse=stats["final_output_mse"],
        final_penalty_mse=stats["final_penalty_mse"],
        rmse_train=float(np.sqrt(stats["final_output_mse"])),
        n_iterations=len(stats["records"]),
        n_accepted=stats["n_accepted"],
        stop_reason=stats["stop_reason"],
        iterations=stats["records"],
        wall_time_s=time.perf_counter() - t0,
    )
    return model, report
