"""
VisionMamba block: input projection and split, causal depthwise conv, selective state-space scan,
SiLU gating, output projection and the pre-norm residual wrapper
"""
from __future__ import annotations

import math
from typing import Optional, Tuple, Union

import numpy as np

from nn import functional as F
from nn.layers import DepthwiseConv1d, LayerNorm, Linear, Module, Parameter
from nn.tensor import Tensor, active_tape, as_tensor, debug_numerics_enabled, get_default_dtype, make_result
from utils.errors import DimensionError, NumericError


def discretize(delta: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Zero-order hold for the state matrix: A_bar = exp(delta * A), shape [..., d_inner, d_state]."""
    return np.exp(delta[..., None] * A)


def _check_finite(hs: np.ndarray) -> None:
    if not np.all(np.isfinite(hs)):
        token = int(np.argwhere(~np.isfinite(hs))[:, 1].min())
        raise NumericError(f"selective_scan produced a non-finite state at token {token}",
                           op='selective_scan', token_index=token)


def _sequential_forward(u, delta, A, Bm, Cm, Dv):
    b, length, d = u.shape
    dA = discretize(delta, A)
    dBu = (delta * u)[..., None] * Bm[:, :, None, :]
    hs = np.empty_like(dA)
    h = np.zeros((b, d, A.shape[1]), dtype=u.dtype)
    for t in range(length):
        h = dA[:, t] * h + dBu[:, t]
        hs[:, t] = h
    if debug_numerics_enabled():
        _check_finite(hs)
    y = np.einsum('bldn,bln->bld', hs, Cm) + u * Dv
    return y, dA, hs


def _chunked_forward(u, delta, A, Bm, Cm, Dv, chunk: int):
    """Within each chunk the recurrence is materialized as a lower-triangular decay kernel."""
    b, length, d = u.shape
    h = np.zeros((b, d, A.shape[1]), dtype=u.dtype)
    ys = []
    for start in range(0, length, chunk):
        stop = min(start + chunk, length)
        span = stop - start
        dlt = delta[:, start:stop]
        log_decay = np.cumsum(dlt[..., None] * A, axis=1)
        dBu = (dlt * u[:, start:stop])[..., None] * Bm[:, start:stop, None, :]
        lower = np.tril(np.ones((span, span), dtype=bool))[None, :, :, None, None]
        diff = log_decay[:, :, None] - log_decay[:, None, :]
        kernel = np.where(lower, np.exp(np.where(lower, diff, 0.0)), 0.0)
        hs = np.einsum('btsdn,bsdn->btdn', kernel, dBu) + np.exp(log_decay) * h[:, None]
        if debug_numerics_enabled():
            try:
                _check_finite(hs)
            except NumericError as err:
                raise NumericError(str(err).replace(f"token {err.token_index}", f"token {err.token_index + start}"),
                                   op='selective_scan', token_index=err.token_index + start)
        ys.append(np.einsum('btdn,btn->btd', hs, Cm[:, start:stop]) + u[:, start:stop] * Dv)
        h = hs[:, -1]
    return np.concatenate(ys, axis=1).astype(u.dtype, copy=False)


def selective_scan_kernel(u: Tensor, delta: Tensor, A: Tensor, Bm: Tensor, Cm: Tensor, D: Tensor,
                          mode: str = 'sequential', chunk: int = 16) -> Tensor:
    """
    h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t,  y_t = C_t . h_t + D * u_t,  h_0 = 0.

    u, delta: [B,L,D]; A: [D,N]; Bm, Cm: [B,L,N]; D: [D].
    ``mode='chunked'`` is only taken outside a gradient tape (or under no_grad); training always uses the sequential scan.
    """
    if u.ndim != 3 or delta.shape != u.shape:
        raise DimensionError('selective_scan', f"u {u.shape} and delta {delta.shape} must both be [B,L,D]")
    b, length, d = u.shape
    n = A.shape[1] if A.ndim == 2 else -1
    if A.shape != (d, n) or Bm.shape != (b, length, n) or Cm.shape != (b, length, n) or D.shape != (d,):
        raise DimensionError(
            'selective_scan',
            f"A {A.shape}, B {Bm.shape}, C {Cm.shape}, D {D.shape} inconsistent with u {u.shape}",
        )
    inputs = (u, delta, A, Bm, Cm, D)
    tracked = active_tape() is not None and any(t.requires_grad for t in inputs)

    if mode == 'chunked' and not tracked:
        out = _chunked_forward(u.data, delta.data, A.data, Bm.data, Cm.data, D.data, chunk)
        return make_result('selective_scan', out, inputs, None)

    y, dA, hs = _sequential_forward(u.data, delta.data, A.data, Bm.data, Cm.data, D.data)

    def backward(g):
        uu, dl, AA, BB, CC, DD = u.data, delta.data, A.data, Bm.data, Cm.data, D.data
        g_D = (g * uu).sum(axis=(0, 1))
        g_C = np.einsum('bld,bldn->bln', g, hs)
        direct = g[..., None] * CC[:, :, None, :]
        g_hs = np.empty_like(hs)
        carry = np.zeros_like(hs[:, 0])
        for t in range(length - 1, -1, -1):
            carry = direct[:, t] + carry
            g_hs[:, t] = carry
            carry = carry * dA[:, t]
        h_prev = np.concatenate([np.zeros_like(hs[:, :1]), hs[:, :-1]], axis=1)
        g_dA = g_hs * h_prev * dA
        g_dBu_B = (g_hs * BB[:, :, None, :]).sum(axis=-1)
        g_delta = (g_dA * AA).sum(axis=-1) + g_dBu_B * uu
        g_A = (g_dA * dl[..., None]).sum(axis=(0, 1))
        g_B = np.einsum('bldn,bld->bln', g_hs, dl * uu)
        g_u = g * DD + g_dBu_B * dl
        return g_u, g_delta, g_A, g_B, g_C, g_D

    return make_result('selective_scan', y, inputs, backward)


class SSMParams(Module):
    """
    Selective state-space parameters of one block.
    A = -exp(A_log) is strictly negative; the step size softplus(W_dt . dt_features + bias_dt) is strictly positive.
    """

    def __init__(self, d_inner: int, d_state: int, dt_rank: int, rng: np.random.Generator,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        super().__init__()
        dtype = get_default_dtype()
        self.d_inner = d_inner
        self.d_state = d_state
        self.dt_rank = dt_rank

        # S4D-real: A_d = -(1..d_state) for every channel
        a = np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1))
        self.A_log = Parameter(np.log(a).astype(dtype), decay=False)
        self.D_skip = Parameter(np.ones(d_inner, dtype=dtype), decay=False)
        self.x_proj = Linear(d_inner, dt_rank + 2 * d_state, rng, bias=False)
        self.dt_proj = Linear(dt_rank, d_inner, rng)

        bound = dt_rank ** -0.5
        self.dt_proj.weight.data = rng.uniform(-bound, bound, size=(d_inner, dt_rank)).astype(dtype)
        dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=d_inner))
        # inverse softplus so that softplus(bias) == dt
        self.dt_proj.bias.data = (dt + np.log(-np.expm1(-dt))).astype(dtype)

    def state_matrix(self) -> Tensor:
        return F.mul(F.exp(self.A_log), -1.0)

    def step_sizes(self, x: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        """Per-token (delta, B, C) from the input tokens."""
        projected = self.x_proj(x)
        dt_features, b_t, c_t = F.split(projected, [self.dt_rank, self.d_state, self.d_state])
        delta = F.softplus(self.dt_proj(dt_features))
        return delta, b_t, c_t


def selective_scan(x: Tensor, params: SSMParams, delta_override: Optional[Union[Tensor, np.ndarray, float]] = None,
                   mode: str = 'sequential', chunk: int = 16) -> Tensor:
    """
    Selective scan over the token axis of x [B,L,d_inner]; output has the same shape.
    ``delta_override`` replaces the computed step sizes (post-softplus).
    """
    if x.ndim != 3 or x.shape[-1] != params.d_inner:
        raise DimensionError('selective_scan', f"expected [B,L,{params.d_inner}], got {x.shape}")
    delta, b_t, c_t = params.step_sizes(x)
    if delta_override is not None:
        if isinstance(delta_override, Tensor):
            delta = delta_override
        else:
            delta = as_tensor(np.broadcast_to(np.asarray(delta_override, dtype=x.dtype), x.shape), like=x)
    return selective_scan_kernel(x, delta, params.state_matrix(), b_t, c_t, params.D_skip, mode=mode, chunk=chunk)


class MambaMixer(Module):
    """
    in_proj -> split(X_token, Z) -> causal depthwise conv -> SiLU -> selective scan -> gate by SiLU(Z) -> out_proj.
    The first d_inner projected channels are X_token, the second d_inner are Z.
    """

    def __init__(self, d_model: int, d_inner: int, d_state: int, dt_rank: int, conv_kernel: int,
                 rng: np.random.Generator, dt_min: float = 1e-3, dt_max: float = 1e-1,
                 scan_mode: str = 'sequential', scan_chunk: int = 16):
        super().__init__()
        self.d_inner = d_inner
        self.scan_mode = scan_mode
        self.scan_chunk = scan_chunk
        self.in_proj = Linear(d_model, 2 * d_inner, rng)
        self.dw_conv = DepthwiseConv1d(d_inner, conv_kernel, rng)
        self.ssm = SSMParams(d_inner, d_state, dt_rank, rng, dt_min=dt_min, dt_max=dt_max)
        self.out_proj = Linear(d_inner, d_model, rng)

    def forward(self, x_norm: Tensor) -> Tensor:
        projected = self.in_proj(x_norm)
        x_token, z = F.split(projected, [self.d_inner, self.d_inner])
        conv = self.dw_conv(F.transpose(x_token, (0, 2, 1)))
        x_conv = F.silu(F.transpose(conv, (0, 2, 1)))
        y = selective_scan(x_conv, self.ssm, mode=self.scan_mode, chunk=self.scan_chunk)
        gated = F.mul(y, F.silu(z))
        return self.out_proj(gated)


class VisionMambaBlock(Module):
    """x + Mamba(LN(x))"""

    def __init__(self, d_model: int, d_inner: int, d_state: int, dt_rank: int, conv_kernel: int,
                 rng: np.random.Generator, ln_eps: float = 1e-5, **mixer_options):
        super().__init__()
        self.norm = LayerNorm(d_model, eps=ln_eps)
        self.mixer = MambaMixer(d_model, d_inner, d_state, dt_rank, conv_kernel, rng, **mixer_options)

    def forward(self, x: Tensor) -> Tensor:
        return F.add(x, self.mixer(self.norm(x)))
