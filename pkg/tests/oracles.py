"""Independent reference implementations used only by the tests.

Nothing here imports the package under test.
"""

import numpy as np


def group_lasso_objective(theta, K, Y, alpha):
    T = K.shape[1]
    R = Y - theta @ K
    return 0.5 / T * float(np.sum(R * R)) + alpha * float(np.sum(np.linalg.norm(theta, axis=0)))


def fista_group_lasso(K, Y, alpha, iters=20000, tol=1e-15):
    """Accelerated proximal gradient for ``1/(2T)||Y - Theta K||^2 + alpha sum_j ||Theta_j||``."""
    T = K.shape[1]
    step = T / np.linalg.norm(K, 2) ** 2
    theta = np.zeros((Y.shape[0], K.shape[0]))
    z, t = theta.copy(), 1.0
    prev = np.inf
    for _ in range(iters):
        grad = -(Y - z @ K) @ K.T / T
        v = z - step * grad
        nrm = np.linalg.norm(v, axis=0)
        shrink = np.maximum(0.0, 1.0 - step * alpha / np.maximum(nrm, 1e-300))
        new = v * shrink
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = new + (t - 1.0) / t_new * (new - theta)
        theta, t = new, t_new
        obj = group_lasso_objective(theta, K, Y, alpha)
        # restart on objective increase keeps the iteration monotone near the optimum
        if obj > prev:
            z, t = theta.copy(), 1.0
        if abs(prev - obj) < tol * max(1.0, abs(obj)):
            break
        prev = obj
    return theta


def dense_eq_qp(H, g, A, b):
    """Solve ``min 1/2 x^T H x + g^T x  s.t.  A x = b`` by one dense KKT solve."""
    n, m = H.shape[0], A.shape[0]
    K = np.block([[H, A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([-g, b]))
    return sol[:n], sol[n:]


def fd_jacobian(f, x, h=1e-6):
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(f(x))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * h)
    return J


def fd_jacobian_richardson(f, x, h=1e-3):
    """Fourth-order Richardson extrapolation of central differences.

    The larger step keeps round-off small for functions that evaluate
    through large, cancelling coefficients.
    """
    return (4.0 * fd_jacobian(f, x, h / 2) - fd_jacobian(f, x, h)) / 3.0


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def lti_mpc_oracle(Gy, y_free, r, Wy, Wu, D, b):
    """Unconstrained linear MPC: minimise ``e^T Wy e + (D u - b)^T Wu (D u - b)`` with ``y = y_free + Gy u``."""
    H = Gy.T @ Wy @ Gy + D.T @ Wu @ D
    rhs = Gy.T @ Wy @ (r - y_free) + D.T @ Wu @ b
    return np.linalg.solve(H, rhs)
