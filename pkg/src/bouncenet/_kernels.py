"""numba helpers for the LSTM time loops.

The forward pass keeps ``np.exp`` (SIMD in numpy) outside the compiled code
and fuses the surrounding arithmetic; the backward pass has no
transcendentals and runs entirely compiled.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def gate_preact(a, pre_t, c_prev, peep, z, H):
    """z[:, :3H] <- negated (and for g doubled) gate pre-activations.

    ``a`` receives the full pre-activation so the output gate can be
    finished once the new cell value is known.
    """
    N = a.shape[0]
    for n in range(N):
        for j in range(H):
            cp = c_prev[n, j]
            ai = a[n, j] + pre_t[n, j] + peep[0, j] * cp
            af = a[n, H + j] + pre_t[n, H + j] + peep[1, j] * cp
            ag = a[n, 2 * H + j] + pre_t[n, 2 * H + j]
            a[n, 3 * H + j] += pre_t[n, 3 * H + j]
            z[n, j] = -ai
            z[n, H + j] = -af
            z[n, 2 * H + j] = -2.0 * ag


@njit(cache=True)
def cell_update(z, a, c_prev, peep, gates_t, c_new, zz, H):
    """From exp'd gate terms compute i, f, g, the new cell and the o/tanh terms."""
    N = a.shape[0]
    for n in range(N):
        for j in range(H):
            i = 1.0 / (1.0 + z[n, j])
            f = 1.0 / (1.0 + z[n, H + j])
            g = 2.0 / (1.0 + z[n, 2 * H + j]) - 1.0
            c = f * c_prev[n, j] + i * g
            gates_t[n, j] = i
            gates_t[n, H + j] = f
            gates_t[n, 2 * H + j] = g
            c_new[n, j] = c
            zz[n, j] = -(a[n, 3 * H + j] + peep[2, j] * c)
            zz[n, H + j] = -2.0 * c


@njit(cache=True)
def cell_output(zz, gates_t, tanh_c_t, h_new, H):
    N = h_new.shape[0]
    for n in range(N):
        for j in range(H):
            o = 1.0 / (1.0 + zz[n, j])
            tc = 2.0 / (1.0 + zz[n, H + j]) - 1.0
            gates_t[n, 3 * H + j] = o
            tanh_c_t[n, j] = tc
            h_new[n, j] = o * tc


@njit(cache=True)
def layer_backward(gates, c, tanh_c, d_out, WhT, peep, active, t_lo, dA):
    """Reverse time loop of one layer; fills ``dA`` (T, N, 4H) in place.

    ``active[t, n]`` is 1.0 inside sequence n's truncation window, else 0.0.
    """
    T, N, H = tanh_c.shape
    dh = np.zeros((N, H))
    dc = np.zeros((N, H))
    da = np.empty((N, 4 * H))
    for t in range(T - 1, t_lo - 1, -1):
        for n in range(N):
            m = active[t, n]
            for j in range(H):
                dh_ = (dh[n, j] + d_out[t, n, j]) * m
                dc_ = dc[n, j] * m
                i = gates[t, n, j]
                f = gates[t, n, H + j]
                g = gates[t, n, 2 * H + j]
                o = gates[t, n, 3 * H + j]
                tc = tanh_c[t, n, j]
                da_o = dh_ * tc * o * (1.0 - o)
                dc_ += dh_ * o * (1.0 - tc * tc) + da_o * peep[2, j]
                da_i = dc_ * g * i * (1.0 - i)
                da_f = dc_ * c[t, n, j] * f * (1.0 - f)
                da_g = dc_ * i * (1.0 - g * g)
                dc[n, j] = dc_ * f + da_i * peep[0, j] + da_f * peep[1, j]
                da[n, j] = da_i
                da[n, H + j] = da_f
                da[n, 2 * H + j] = da_g
                da[n, 3 * H + j] = da_o
        dA[t] = da
        np.dot(da, WhT, dh)
    return dA
