"""Finite-difference gradient oracle shared by autodiff tests."""
import numpy as np


def fd_grad(fn, arrays, index, h=1e-3):
    """Central-difference gradient of scalar fn(arrays) w.r.t. arrays[index].

    fn must re-run the full forward from plain float32 numpy inputs.
    """
    base = [a.copy() for a in arrays]
    target = base[index]
    grad = np.zeros(target.shape, dtype=np.float64)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        step = h * max(1.0, abs(float(orig)))
        flat[i] = orig + step
        hi = float(flat[i])           # realized step after float32 rounding
        f_plus = float(fn(*base))
        flat[i] = orig - step
        lo = float(flat[i])
        f_minus = float(fn(*base))
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (hi - lo)
    return grad


def relative_errors(analytic, numeric):
    """Per-coordinate relative error with a floor for tiny denominators."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-2)
    return np.abs(a - n) / denom


def check_grad(fn, arrays, index, h=1e-3, frac_tol=0.99, rel_tol=1e-3,
               worst_tol=1e-2):
    """Assert analytic (float32 engine) vs float64 FD agreement.

    The probe re-runs the same forward formulas in double precision so
    the difference quotient is not drowned by float32 rounding.
    """
    from parklab.nn import Tape
    from parklab.nn.tensor import precision

    tape = Tape()
    leaves = [tape.leaf(a) for a in arrays]
    loss = fn(*leaves)
    grads = tape.backward(loss)
    analytic = grads.wrt(leaves[index])

    def numeric_fn(*arrs):
        with precision(np.float64):
            t = Tape()
            ls = [t.leaf(a) for a in arrs]
            return fn(*ls).item()

    f64_arrays = [a.astype(np.float64) for a in arrays]
    numeric = fd_grad(numeric_fn, f64_arrays, index, h=h)
    errs = relative_errors(analytic, numeric)
    frac_ok = float((errs <= rel_tol).mean())
    assert frac_ok >= frac_tol, f"only {frac_ok:.3f} of coords within {rel_tol}"
    assert errs.max() <= worst_tol, f"worst relative error {errs.max():.4g}"
    return analytic, numeric
