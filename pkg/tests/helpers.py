"""Shared oracles for the test suite: central finite differences and scalar wrappers."""
import numpy as np

from m4d import autodiff as ad


def numeric_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x)
        flat[i] = keep - h
        fm = f(x)
        flat[i] = keep
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def tape_grad(op, x):
    """Gradient of sum(op(tensor)) with respect to x via the tape."""
    with ad.Tape() as tape:
        t = ad.parameter(x)
        out = op(t)
        loss = ad.tensor_sum(out)
        tape.backward(loss)
    return t.grad.copy()


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return np.abs(a - b).max(initial=0.0) / denom


def gradcheck(op, x, tol=1e-4, h=1e-6):
    """Compare tape gradient of sum(op(x)) with finite differences."""
    analytic = tape_grad(op, x)

    def scalar(arr):
        with ad.Tape():
            return float(ad.tensor_sum(op(ad.constant(arr))).data)

    numeric = numeric_grad(scalar, np.array(x, dtype=np.float64), h=h)
    err = rel_err(analytic, numeric)
    assert err <= tol, f"gradient mismatch: rel err {err:.3e} > {tol}"
    return err
