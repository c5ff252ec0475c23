"""Hot numeric kernels for the beamforming / phase-shift solver.

Every function here is compiled with numba unless ``RISFL_NUMBA=0``; the
bodies only use the numpy subset numba understands, so the uncompiled
path is the same code run by the interpreter.

Array conventions (active devices only, ``n`` of them):

* ``hd``  -- (n, N) direct channels, one row per device
* ``g``   -- (n, N, L) cascaded channels G_m = H_RP diag(h_DR,m)
* ``k2``  -- (n,) squared sample counts K_m**2
"""
import numpy as np

from ._accel import njit


@njit
def effective_channels(hd, g, theta):
    """Rows h_m(theta) = h_DP,m + G_m theta, shape (n, N)."""
    return hd + (g * theta[np.newaxis, np.newaxis, :]).sum(axis=2)


@njit
def beam_products(hd, g, f, theta):
    """f^H h_m(theta) for every device."""
    h = effective_channels(hd, g, theta)
    return (np.conj(f)[np.newaxis, :] * h).sum(axis=1)


@njit
def minmax_objective(hd, g, k2, f, theta):
    """max_m -|f^H h_m|^2 / K_m^2."""
    fh = beam_products(hd, g, f, theta)
    return np.max(-(fh.real ** 2 + fh.imag ** 2) / k2)


@njit
def surrogate(hd, g, f, theta, tau):
    """Coefficients (a_m, b_m, c_m) of the linearised min-max constraints."""
    n = hd.shape[0]
    num_ris = g.shape[2]
    h = effective_channels(hd, g, theta)
    fh = (np.conj(f)[np.newaxis, :] * h).sum(axis=1)
    gf = (np.conj(g) * f[np.newaxis, :, np.newaxis]).sum(axis=1)  # rows G_m^H f
    a = tau * f[np.newaxis, :] + h * np.conj(fh)[:, np.newaxis]
    b = tau * theta[np.newaxis, :] + gf * fh[:, np.newaxis]
    # f^H G_m theta, conjugated gives theta^H G_m^H f
    fgt = (np.conj(gf) * theta[np.newaxis, :]).sum(axis=1)
    c = np.empty(n)
    for m in range(n):
        c[m] = (fh[m].real ** 2 + fh[m].imag ** 2 + 2.0 * tau * (num_ris + 1)
                + 2.0 * (fh[m] * np.conj(fgt[m])).real)
    return a, b, c


@njit
def project_simplex(v):
    """Euclidean projection onto {x >= 0, sum x = 1} (sort-based)."""
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = 0
    for j in range(n):
        if u[j] - (css[j] - 1.0) / (j + 1) > 0.0:
            rho = j
    shift = (css[rho] - 1.0) / (rho + 1)
    return np.maximum(v - shift, 0.0)


@njit
def weighted_sums(zeta, a, b):
    za = (zeta[:, np.newaxis] * a).sum(axis=0)
    zb = (zeta[:, np.newaxis] * b).sum(axis=0)
    return za, zb


@njit
def dual_value(zeta, a, b, c):
    """2||sum zeta a||_2 + 2||sum zeta b||_1 - sum zeta c."""
    za, zb = weighted_sums(zeta, a, b)
    return 2.0 * np.sqrt(np.sum(np.abs(za) ** 2)) + 2.0 * np.sum(np.abs(zb)) - np.sum(zeta * c)


@njit
def dual_value_and_grad(xi, a, b, c, k2):
    """Dual objective and its (sub)gradient in the simplex variable xi = K^2 zeta."""
    zeta = xi / k2
    za, zb = weighted_sums(zeta, a, b)
    norm_a = np.sqrt(np.sum(np.abs(za) ** 2))
    abs_b = np.abs(zb)
    val = 2.0 * norm_a + 2.0 * np.sum(abs_b) - np.sum(zeta * c)
    grad = -c.copy()
    if norm_a > 0.0:
        ua = za / norm_a
        grad += 2.0 * (a * np.conj(ua)[np.newaxis, :]).sum(axis=1).real
    ub = np.zeros(zb.shape[0], dtype=np.complex128)
    for l in range(zb.shape[0]):
        if abs_b[l] > 0.0:
            ub[l] = zb[l] / abs_b[l]
    grad += 2.0 * (b * np.conj(ub)[np.newaxis, :]).sum(axis=1).real
    return val, grad / k2


@njit
def solve_dual(a, b, c, k2, xi0, step, max_iter, tol):
    """Spectral projected gradient on the unit simplex in xi = K^2 zeta.

    Barzilai-Borwein steps with a nonmonotone Armijo backtrack over the
    last 10 values. ``step`` scales the first trial step, which is
    ``step / s0`` with ``s0`` the sup-norm of the centred initial gradient.
    Stops once the projected step falls below ``tol`` (sup-norm) and
    returns the best iterate seen.
    """
    n = a.shape[0]
    xi = project_simplex(xi0)
    val, grad = dual_value_and_grad(xi, a, b, c, k2)
    best_xi = xi.copy()
    best_val = val
    if n == 1:
        return best_xi, best_val, 0, True
    centred = grad - np.mean(grad)
    scale = np.max(np.abs(centred))
    if scale <= 0.0:
        return best_xi, best_val, 0, True
    lam = step / scale
    memory = 10
    hist = np.full(memory, val)
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        d = project_simplex(xi - lam * grad) - xi
        if np.max(np.abs(d)) < tol:
            converged = True
            break
        slope = np.sum(grad * d)
        ref = np.max(hist)
        alpha = 1.0
        while True:
            nxt = xi + alpha * d
            nval, ngrad = dual_value_and_grad(nxt, a, b, c, k2)
            if nval <= ref + 1e-4 * alpha * slope or alpha < 1e-12:
                break
            alpha *= 0.5
        s = nxt - xi
        y = ngrad - grad
        sy = np.sum(s * y)
        if sy > 0.0:
            lam = min(max(np.sum(s * s) / sy, 1e-30), 1e30)
        else:
            lam = min(4.0 * lam, 1e30)
        xi = np.maximum(nxt, 0.0)
        xi /= np.sum(xi)
        val = nval
        grad = ngrad
        hist[it % memory] = val
        if val < best_val:
            best_val = val
            best_xi = xi.copy()
    return best_xi, best_val, it, converged


@njit
def primal_update(zeta, a, b, f_prev):
    """Closed-form minimiser of the Lagrangian over unit-norm f, unit-modulus theta."""
    za, zb = weighted_sums(zeta, a, b)
    norm_a = np.sqrt(np.sum(np.abs(za) ** 2))
    if norm_a < 1e-14:
        f = f_prev.copy()
    else:
        f = za / norm_a
    theta = np.ones(zb.shape[0], dtype=np.complex128)
    for l in range(zb.shape[0]):
        mag = np.abs(zb[l])
        if mag > 0.0:
            theta[l] = zb[l] / mag
    return f, theta


@njit
def sca_loop(hd, g, k2, f0, theta0, tau, i_max, eps, dual_step, dual_iter, dual_tol, return_last):
    """Successive convex approximation for min_{f, theta} max_m -|f^H h_m(theta)|^2 / K_m^2.

    Returns ``(f, theta, obj, iterations, stopped_early, trace)`` where
    ``trace[i]`` is the objective after ``i`` updates (``trace[0]`` is the
    initial point) and entries beyond ``iterations`` are NaN.
    """
    n = hd.shape[0]
    f = f0.copy()
    theta = theta0.copy()
    obj = minmax_objective(hd, g, k2, f, theta)
    trace = np.full(i_max + 1, np.nan)
    trace[0] = obj
    best_f = f.copy()
    best_theta = theta.copy()
    best_obj = obj
    xi = np.full(n, 1.0 / n)
    iterations = 0
    stopped = False
    for i in range(i_max):
        a, b, c = surrogate(hd, g, f, theta, tau)
        xi, _, _, _ = solve_dual(a, b, c, k2, xi, dual_step, dual_iter, dual_tol)
        f_new, theta_new = primal_update(xi / k2, a, b, f)
        obj_new = minmax_objective(hd, g, k2, f_new, theta_new)
        iterations = i + 1
        trace[iterations] = obj_new
        if obj_new < best_obj:
            best_obj = obj_new
            best_f = f_new.copy()
            best_theta = theta_new.copy()
        change = np.abs(obj_new - obj)
        f = f_new
        theta = theta_new
        obj = obj_new
        if change <= eps * np.abs(obj_new):
            stopped = True
            break
    if return_last:
        return f, theta, obj, iterations, stopped, trace
    return best_f, best_theta, best_obj, iterations, stopped, trace


@njit
def nearest_phase_index(angles, levels):
    """Index of the nearest point of {2 pi i / levels}; ties go to the smaller index."""
    step = 2.0 * np.pi / levels
    out = np.empty(angles.shape[0], dtype=np.int64)
    for l in range(angles.shape[0]):
        a = angles[l] % (2.0 * np.pi)
        lo = int(np.floor(a / step))
        frac = a - lo * step
        if frac < step - frac:
            out[l] = lo % levels
        elif frac > step - frac:
            out[l] = (lo + 1) % levels
        else:
            out[l] = min(lo % levels, (lo + 1) % levels)
    return out
