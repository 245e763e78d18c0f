import numpy as np


def fd_grad(f, x, h=1e-4):
    """Central finite-difference gradient of scalar f at x (independent oracle)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    fx = x.ravel()
    fg = g.ravel()
    for i in range(fx.size):
        orig = fx[i]
        fx[i] = orig + h
        fp = f(x)
        fx[i] = orig - h
        fm = f(x)
        fx[i] = orig
        fg[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b):
    """Norm-based relative error between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom
