"""Recurrent cells: vanilla RNN, GRU and SRU, with hand-derived BPTT.

All forward functions take a batch of sequences ``x`` of shape (B, T, D_in)
and return per-timestep outputs of shape (B, T, D_out) plus a trace holding
the cached activations the backward pass needs.  Weight matrices are stored
hidden x input (so the batched product is ``x @ W.T``) and biases as 1 x n
row vectors.

Cell equations
--------------
vanilla:  h_t = tanh(W_h x_t + U_h h_{t-1} + b_h)
          y_t = W_y h_t + b_y                      (linear readout)

GRU:      z_t = sigm(W_z x_t + U_z h_{t-1} + b_z)
          r_t = sigm(W_r x_t + U_r h_{t-1} + b_r)
          hc_t = tanh(W_h x_t + U_h (r_t * h_{t-1}) + b_h)
          h_t = (1 - z_t) * h_{t-1} + z_t * hc_t

SRU:      xhat_t = W x_t
          f_t = sigm(W_f x_t + b_f)
          r_t = sigm(W_r x_t + b_r)
          c_t = f_t * c_{t-1} + (1 - f_t) * xhat_t
          h_t = r_t * tanh(c_t) + (1 - r_t) * xh_t

where xh_t is x_t itself when D_in == hidden, else a learned projection
W_p x_t.  The SRU gates depend only on x_t, so the three matrix products for
every timestep are computed as single (B*T) x D GEMMs before the light
sequential scan over c_t; :func:`sru_forward_naive` keeps the step-by-step
variant as an equivalence oracle.

Backward passes return exact gradients of the forward map and were written
to be checked against central finite differences (see tests); the
per-timestep pre-activation gradients are buffered so that all weight
gradients reduce to a handful of large GEMMs after the sequential loop.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .numerics import init_params, sigmoid

__all__ = [
    "VanillaParams",
    "GruParams",
    "SruParams",
    "VanillaTrace",
    "GruTrace",
    "SruTrace",
    "init_vanilla",
    "init_gru",
    "init_sru",
    "vanilla_forward",
    "gru_forward",
    "sru_forward",
    "sru_forward_naive",
    "vanilla_backward",
    "gru_backward",
    "sru_backward",
    "cell_forward",
    "cell_backward",
    "zeros_like_params",
]


class _ArrayFields:
    """Mixin: iterate dataclass ndarray fields as (name, array) pairs."""

    def named(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                yield f.name, value


@dataclass
class VanillaParams(_ArrayFields):
    W_h: np.ndarray  # (H, D_in)
    U_h: np.ndarray  # (H, H)
    b_h: np.ndarray  # (1, H)
    W_y: np.ndarray  # (D_out, H)
    b_y: np.ndarray  # (1, D_out)


@dataclass
class GruParams(_ArrayFields):
    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray


@dataclass
class SruParams(_ArrayFields):
    W: np.ndarray    # (H, D_in)
    W_f: np.ndarray
    b_f: np.ndarray
    W_r: np.ndarray
    b_r: np.ndarray
    W_p: np.ndarray | None = None  # highway projection, only when D_in != H


# gradient containers share the parameter structure
CellParams = VanillaParams | GruParams | SruParams


def zeros_like_params(params: CellParams) -> CellParams:
    kwargs = {name: np.zeros_like(arr) for name, arr in params.named()}
    return type(params)(**kwargs)


def init_vanilla(input_dim: int, hidden: int, output_dim: int,
                 rng: np.random.Generator) -> VanillaParams:
    return VanillaParams(
        W_h=init_params(hidden, input_dim, "uniform-scaled", rng),
        U_h=init_params(hidden, hidden, "uniform-scaled", rng),
        b_h=init_params(1, hidden, "zeros", rng),
        W_y=init_params(output_dim, hidden, "uniform-scaled", rng),
        b_y=init_params(1, output_dim, "zeros", rng),
    )


def init_gru(input_dim: int, hidden: int, rng: np.random.Generator) -> GruParams:
    def w():
        return init_params(hidden, input_dim, "uniform-scaled", rng)

    def u():
        return init_params(hidden, hidden, "uniform-scaled", rng)

    def b():
        return init_params(1, hidden, "zeros", rng)

    return GruParams(W_z=w(), U_z=u(), b_z=b(),
                     W_r=w(), U_r=u(), b_r=b(),
                     W_h=w(), U_h=u(), b_h=b())


def init_sru(input_dim: int, hidden: int, rng: np.random.Generator) -> SruParams:
    def w():
        return init_params(hidden, input_dim, "uniform-scaled", rng)

    def b():
        return init_params(1, hidden, "zeros", rng)

    proj = None if input_dim == hidden else init_params(hidden, input_dim, "uniform-scaled", rng)
    return SruParams(W=w(), W_f=w(), b_f=b(), W_r=w(), b_r=b(), W_p=proj)


def _check_seq(x: np.ndarray, input_dim: int, who: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"{who}: expected (batch, time, features) input, got shape {x.shape}")
    if x.shape[2] != input_dim:
        raise ValueError(f"{who}: input feature dim {x.shape[2]} != parameter dim {input_dim}")
    return x


def _init_state(state, batch: int, hidden: int, who: str) -> np.ndarray:
    if state is None:
        return np.zeros((batch, hidden))
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (batch, hidden):
        raise ValueError(f"{who}: initial state shape {state.shape} != ({batch}, {hidden})")
    return state.copy()


# ---------------------------------------------------------------------------
# vanilla RNN
# ---------------------------------------------------------------------------

@dataclass
class VanillaTrace(_ArrayFields):
    x: np.ndarray    # (B, T, D)
    hs: np.ndarray   # (B, T+1, H), hs[:,0] = h0


def vanilla_forward(params: VanillaParams, x: np.ndarray, h0=None):
    """Run the vanilla cell over a sequence batch.

    Returns (outputs, trace) with outputs of shape (B, T, D_out).
    """
    x = _check_seq(x, params.W_h.shape[1], "vanilla_forward")
    B, T, _ = x.shape
    H = params.W_h.shape[0]
    h = _init_state(h0, B, H, "vanilla_forward")

    # input-side products for all timesteps in one GEMM
    xw = x.reshape(B * T, -1) @ params.W_h.T
    xw = xw.reshape(B, T, H) + params.b_h

    hs = np.empty((B, T + 1, H))
    hs[:, 0] = h
    for t in range(T):
        h = np.tanh(xw[:, t] + h @ params.U_h.T)
        hs[:, t + 1] = h

    ys = hs[:, 1:].reshape(B * T, H) @ params.W_y.T
    ys = ys.reshape(B, T, -1) + params.b_y
    return ys, VanillaTrace(x=x, hs=hs)


def vanilla_backward(trace: VanillaTrace, params: VanillaParams, dy: np.ndarray):
    """BPTT through the vanilla cell.

    ``dy`` holds the loss gradient w.r.t. every output y_t, shape (B, T, O).
    Returns (grads, dx, dh0).
    """
    x, hs = trace.x, trace.hs
    B, T, D = x.shape
    H = params.W_h.shape[0]
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape[:2] != (B, T):
        raise ValueError(f"vanilla_backward: upstream shape {dy.shape} mismatches trace ({B},{T},...)")

    h_out = hs[:, 1:]
    dh_from_y = dy.reshape(B * T, -1) @ params.W_y
    dh_from_y = dh_from_y.reshape(B, T, H)

    da = np.empty((B, T, H))
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dh_from_y[:, t] + dh_next
        da_t = dh * (1.0 - h_out[:, t] ** 2)
        da[:, t] = da_t
        dh_next = da_t @ params.U_h
    dh0 = dh_next

    da2 = da.reshape(B * T, H)
    x2 = x.reshape(B * T, D)
    dy2 = dy.reshape(B * T, -1)
    grads = VanillaParams(
        W_h=da2.T @ x2,
        U_h=da2.T @ hs[:, :-1].reshape(B * T, H),
        b_h=da2.sum(axis=0, keepdims=True),
        W_y=dy2.T @ h_out.reshape(B * T, H),
        b_y=dy2.sum(axis=0, keepdims=True),
    )
    dx = (da2 @ params.W_h).reshape(B, T, D)
    return grads, dx, dh0


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

@dataclass
class GruTrace(_ArrayFields):
    x: np.ndarray     # (B, T, D)
    hs: np.ndarray    # (B, T+1, H)
    z: np.ndarray     # (B, T, H)
    r: np.ndarray     # (B, T, H)
    hc: np.ndarray    # (B, T, H) tanh candidate


def gru_forward(params: GruParams, x: np.ndarray, h0=None):
    """GRU over a sequence batch; returns (hidden states (B,T,H), trace)."""
    x = _check_seq(x, params.W_z.shape[1], "gru_forward")
    B, T, _ = x.shape
    H = params.W_z.shape[0]
    h = _init_state(h0, B, H, "gru_forward")

    x2 = x.reshape(B * T, -1)
    xz = (x2 @ params.W_z.T).reshape(B, T, H) + params.b_z
    xr = (x2 @ params.W_r.T).reshape(B, T, H) + params.b_r
    xh = (x2 @ params.W_h.T).reshape(B, T, H) + params.b_h

    hs = np.empty((B, T + 1, H))
    hs[:, 0] = h
    z = np.empty((B, T, H))
    r = np.empty((B, T, H))
    hc = np.empty((B, T, H))
    for t in range(T):
        z_t = sigmoid(xz[:, t] + h @ params.U_z.T)
        r_t = sigmoid(xr[:, t] + h @ params.U_r.T)
        hc_t = np.tanh(xh[:, t] + (r_t * h) @ params.U_h.T)
        h = (1.0 - z_t) * h + z_t * hc_t
        z[:, t], r[:, t], hc[:, t] = z_t, r_t, hc_t
        hs[:, t + 1] = h

    return hs[:, 1:].copy(), GruTrace(x=x, hs=hs, z=z, r=r, hc=hc)


def gru_backward(trace: GruTrace, params: GruParams, dh_up: np.ndarray):
    """BPTT through the GRU; ``dh_up`` is dLoss/dh_t, shape (B, T, H).

    Returns (grads, dx, dh0).
    """
    x, hs, z, r, hc = trace.x, trace.hs, trace.z, trace.r, trace.hc
    B, T, D = x.shape
    H = z.shape[2]
    dh_up = np.asarray(dh_up, dtype=np.float64)
    if dh_up.shape != (B, T, H):
        raise ValueError(f"gru_backward: upstream shape {dh_up.shape} != ({B},{T},{H})")

    da_z = np.empty((B, T, H))
    da_r = np.empty((B, T, H))
    da_h = np.empty((B, T, H))
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h_prev = hs[:, t]
        z_t, r_t, hc_t = z[:, t], r[:, t], hc[:, t]
        dh = dh_up[:, t] + dh_next

        dhc = dh * z_t
        dz = dh * (hc_t - h_prev)
        dh_prev = dh * (1.0 - z_t)

        da_h_t = dhc * (1.0 - hc_t ** 2)
        drh = da_h_t @ params.U_h          # grad w.r.t. (r_t * h_prev)
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r_t

        da_z_t = dz * z_t * (1.0 - z_t)
        da_r_t = dr * r_t * (1.0 - r_t)
        dh_prev = dh_prev + da_z_t @ params.U_z + da_r_t @ params.U_r

        da_z[:, t], da_r[:, t], da_h[:, t] = da_z_t, da_r_t, da_h_t
        dh_next = dh_prev
    dh0 = dh_next

    x2 = x.reshape(B * T, D)
    hp2 = hs[:, :-1].reshape(B * T, H)
    rh2 = (r * hs[:, :-1]).reshape(B * T, H)
    dz2, dr2, dc2 = (da_z.reshape(B * T, H), da_r.reshape(B * T, H),
                     da_h.reshape(B * T, H))
    grads = GruParams(
        W_z=dz2.T @ x2, U_z=dz2.T @ hp2, b_z=dz2.sum(axis=0, keepdims=True),
        W_r=dr2.T @ x2, U_r=dr2.T @ hp2, b_r=dr2.sum(axis=0, keepdims=True),
        W_h=dc2.T @ x2, U_h=dc2.T @ rh2, b_h=dc2.sum(axis=0, keepdims=True),
    )
    dx = (dz2 @ params.W_z + dr2 @ params.W_r + dc2 @ params.W_h).reshape(B, T, D)
    return grads, dx, dh0


# ---------------------------------------------------------------------------
# SRU
# ---------------------------------------------------------------------------

@dataclass
class SruTrace(_ArrayFields):
    x: np.ndarray      # (B, T, D)
    xhat: np.ndarray   # (B, T, H)
    f: np.ndarray      # (B, T, H)
    r: np.ndarray      # (B, T, H)
    cs: np.ndarray     # (B, T+1, H), cs[:,0] = c0
    xh: np.ndarray     # (B, T, H) highway input (x or its projection)
    tanh_c: np.ndarray  # (B, T, H)


def _sru_highway(params: SruParams, x2: np.ndarray, B: int, T: int) -> np.ndarray:
    H = params.W.shape[0]
    if params.W_p is not None:
        return (x2 @ params.W_p.T).reshape(B, T, H)
    if x2.shape[1] != H:
        raise ValueError(
            f"sru: highway needs input dim == hidden dim ({x2.shape[1]} != {H}) "
            "or a projection matrix W_p")
    return x2.reshape(B, T, H)


def sru_forward(params: SruParams, x: np.ndarray, c0=None):
    """SRU over a sequence batch; returns (outputs (B,T,H), trace).

    The three matrix products W x_t, W_f x_t, W_r x_t for all timesteps are
    computed up front as single GEMMs; only the elementwise c_t scan is
    sequential.
    """
    x = _check_seq(x, params.W.shape[1], "sru_forward")
    B, T, _ = x.shape
    H = params.W.shape[0]
    c = _init_state(c0, B, H, "sru_forward")

    x2 = x.reshape(B * T, -1)
    xhat = (x2 @ params.W.T).reshape(B, T, H)
    f = sigmoid((x2 @ params.W_f.T).reshape(B, T, H) + params.b_f)
    r = sigmoid((x2 @ params.W_r.T).reshape(B, T, H) + params.b_r)
    xh = _sru_highway(params, x2, B, T)

    cs = np.empty((B, T + 1, H))
    cs[:, 0] = c
    for t in range(T):
        c = f[:, t] * c + (1.0 - f[:, t]) * xhat[:, t]
        cs[:, t + 1] = c

    tanh_c = np.tanh(cs[:, 1:])
    h = r * tanh_c + (1.0 - r) * xh
    return h, SruTrace(x=x, xhat=xhat, f=f, r=r, cs=cs, xh=xh, tanh_c=tanh_c)


def sru_forward_naive(params: SruParams, x: np.ndarray, c0=None):
    """Step-by-step SRU without the batched precompute; equivalence oracle."""
    x = _check_seq(x, params.W.shape[1], "sru_forward_naive")
    B, T, _ = x.shape
    H = params.W.shape[0]
    c = _init_state(c0, B, H, "sru_forward_naive")

    h = np.empty((B, T, H))
    for t in range(T):
        x_t = x[:, t]
        xhat_t = x_t @ params.W.T
        f_t = sigmoid(x_t @ params.W_f.T + params.b_f)
        r_t = sigmoid(x_t @ params.W_r.T + params.b_r)
        c = f_t * c + (1.0 - f_t) * xhat_t
        xh_t = x_t @ params.W_p.T if params.W_p is not None else x_t
        h[:, t] = r_t * np.tanh(c) + (1.0 - r_t) * xh_t
    return h


def sru_backward(trace: SruTrace, params: SruParams, dh_up: np.ndarray):
    """BPTT through the SRU; ``dh_up`` is dLoss/dh_t, shape (B, T, H).

    Returns (grads, dx, dc0).  Only the reverse c-scan is sequential; all
    weight gradients are batched GEMMs.
    """
    x, xhat, f, r, cs, xh, tanh_c = (trace.x, trace.xhat, trace.f, trace.r,
                                     trace.cs, trace.xh, trace.tanh_c)
    B, T, D = x.shape
    H = f.shape[2]
    dh_up = np.asarray(dh_up, dtype=np.float64)
    if dh_up.shape != (B, T, H):
        raise ValueError(f"sru_backward: upstream shape {dh_up.shape} != ({B},{T},{H})")

    dr = dh_up * (tanh_c - xh)
    dxh = dh_up * (1.0 - r)
    dc_direct = dh_up * r * (1.0 - tanh_c ** 2)

    # reverse scan: gc_t = dc_direct_t + f_{t+1} * gc_{t+1}
    gc = np.empty((B, T, H))
    carry = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        carry = dc_direct[:, t] + carry
        gc[:, t] = carry
        carry = f[:, t] * carry
    dc0 = carry

    df = gc * (cs[:, :-1] - xhat)
    dxhat = gc * (1.0 - f)
    da_f = df * f * (1.0 - f)
    da_r = dr * r * (1.0 - r)

    x2 = x.reshape(B * T, D)
    dxhat2 = dxhat.reshape(B * T, H)
    daf2 = da_f.reshape(B * T, H)
    dar2 = da_r.reshape(B * T, H)
    dxh2 = dxh.reshape(B * T, H)

    grads = SruParams(
        W=dxhat2.T @ x2,
        W_f=daf2.T @ x2, b_f=daf2.sum(axis=0, keepdims=True),
        W_r=dar2.T @ x2, b_r=dar2.sum(axis=0, keepdims=True),
        W_p=dxh2.T @ x2 if params.W_p is not None else None,
    )
    dx2 = dxhat2 @ params.W + daf2 @ params.W_f + dar2 @ params.W_r
    if params.W_p is not None:
        dx2 = dx2 + dxh2 @ params.W_p
    else:
        dx2 = dx2 + dxh2
    return grads, dx2.reshape(B, T, D), dc0


# ---------------------------------------------------------------------------
# dispatch helpers used by the network module
# ---------------------------------------------------------------------------

def cell_forward(params: CellParams, x: np.ndarray, state0=None):
    if isinstance(params, VanillaParams):
        return vanilla_forward(params, x, state0)
    if isinstance(params, GruParams):
        return gru_forward(params, x, state0)
    if isinstance(params, SruParams):
        return sru_forward(params, x, state0)
    raise TypeError(f"unknown cell parameter type {type(params)}")


def cell_backward(trace, params: CellParams, upstream: np.ndarray):
    """Dispatch to the matching backward pass; trace and params must pair up."""
    if isinstance(params, VanillaParams):
        if not isinstance(trace, VanillaTrace):
            raise TypeError("trace/params mismatch: vanilla params need a VanillaTrace")
        return vanilla_backward(trace, params, upstream)
    if isinstance(params, GruParams):
        if not isinstance(trace, GruTrace):
            raise TypeError("trace/params mismatch: GRU params need a GruTrace")
        return gru_backward(trace, params, upstream)
    if isinstance(params, SruParams):
        if not isinstance(trace, SruTrace):
            raise TypeError("trace/params mismatch: SRU params need an SruTrace")
        return sru_backward(trace, params, upstream)
    raise TypeError(f"unknown cell parameter type {type(params)}")
