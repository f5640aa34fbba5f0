"""Independent reference computations used by the tests (not part of the package)."""

import numpy as np
from numba import njit


@njit(cache=True)
def prox_gradient_numba(H, c, tau, beta, h, steps):
    """Fixed-step proximal gradient for 1/2 u'Hu - c'u + beta sum ||u_i||, u split into blocks of h."""
    n = c.shape[0]
    u = np.zeros(n)
    v = np.zeros(n)
    for _ in range(steps):
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += H[i, j] * u[j]
            v[i] = u[i] - tau * (acc - c[i])
        for b in range(n // h):
            nv = 0.0
            for k in range(h):
                nv += v[b * h + k] ** 2
            nv = np.sqrt(nv)
            s = 1.0 - tau * beta / nv if nv > tau * beta else 0.0
            for k in range(h):
                u[b * h + k] = s * v[b * h + k]
    return u


def helmholtz_pstar(y, x, kappas=(4 * np.pi, 6 * np.pi), depth=0.5, obs=None):
    """(K* y)(x) written directly in complex arithmetic: p_c = sum_m conj(g_c(x - y_m)) y_mc."""
    obs = np.linspace(-1, 1, 7) if obs is None else np.asarray(obs)
    yc = np.asarray(y, float).reshape(len(obs), len(kappas), 2)
    yc = yc[..., 0] + 1j * yc[..., 1]
    out = []
    for c, kap in enumerate(kappas):
        r = np.sqrt((x - obs) ** 2 + depth**2)
        val = np.sum(np.conj(np.exp(1j * kap * r) / r) * yc[:, c])
        out += [val.real, val.imag]
    return np.array(out)


def helmholtz_forward(points, coeffs, kappas=(4 * np.pi, 6 * np.pi), depth=0.5, obs=None):
    """K u in complex arithmetic, returned in the interleaved real layout (m-major)."""
    obs = np.linspace(-1, 1, 7) if obs is None else np.asarray(obs)
    coeffs = np.asarray(coeffs, float).reshape(len(points), len(kappas), 2)
    uc = coeffs[..., 0] + 1j * coeffs[..., 1]
    out = np.zeros((len(obs), len(kappas)), complex)
    for x, u in zip(np.ravel(points), uc):
        for c, kap in enumerate(kappas):
            r = np.sqrt((x - obs) ** 2 + depth**2)
            out[:, c] += np.exp(1j * kap * r) / r * u[c]
    return np.stack([out.real, out.imag], -1).ravel()


def connected_components(points, radius):
    """Clusters of the graph 'distance <= radius' by breadth-first search (transitive closure)."""
    points = np.asarray(points, float).reshape(len(points), -1)
    n = len(points)
    seen, comps = [False] * n, []
    for s in range(n):
        if seen[s]:
            continue
        stack, comp = [s], []
        seen[s] = True
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in range(n):
                if not seen[j] and np.linalg.norm(points[i] - points[j]) <= radius:
                    seen[j] = True
                    stack.append(j)
        comps.append(sorted(comp))
    return sorted(comps)
