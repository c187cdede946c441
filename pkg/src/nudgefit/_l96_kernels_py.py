"""Pure numpy fallback for the compiled two-layer Lorenz 96 kernels."""
import numpy as np


def l96_tendency(x, d_slow, d_fast, gamma, F, out=None):
    K, J = d_fast.shape
    x = np.asarray(x)
    if x.shape[0] != K * (J + 1):
        raise ValueError("state length does not match K*(J+1)")
    u = x[:K]
    v = x[K:].reshape(K, J)
    if out is None:
        out = np.empty(x.shape[0])
    out[:K] = np.roll(u, 1) * (np.roll(u, -1) - np.roll(u, 2)) + np.einsum("kj,kj->k", gamma, v) * u \
        - d_slow * u + F
    out[K:] = (-d_fast * v - gamma * (u * u)[:, None]).ravel()
    return out


def l96_coupled_rk4(truth, nudged, ds_true, df_true, ds_proxy, df_proxy, gamma, F, gains,
                    dt, nsteps, record=None):
    n = truth.shape[0]
    if nudged.shape[0] != n or gains.shape[0] != n or n != ds_true.shape[0] * (df_true.shape[1] + 1):
        raise ValueError("dimension mismatch")
    if record is not None and (record.shape[0] < nsteps or record.shape[1] != n):
        raise ValueError("record buffer too small")

    def f(s):
        out = np.empty_like(s)
        l96_tendency(s[:n], ds_true, df_true, gamma, F, out[:n])
        l96_tendency(s[n:], ds_proxy, df_proxy, gamma, F, out[n:])
        out[n:] -= gains * (s[n:] - s[:n])
        return out

    s = np.concatenate([truth, nudged])
    bad = -1
    for step in range(nsteps):
        k1 = f(s)
        k2 = f(s + 0.5 * dt * k1)
        k3 = f(s + 0.5 * dt * k2)
        k4 = f(s + dt * k3)
        s = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if record is not None:
            record[step] = s[:n]
        if not np.all(np.isfinite(s)):
            bad = step
            break
    truth[:] = s[:n]
    nudged[:] = s[n:]
    return bad
