"""Parameter storage, Adam updates, and finite-difference gradient checking."""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .errors import TrainingDiverged


class ParamStore:
    """Named float32 parameter groups plus per-group Adam moments.

    Group order is insertion order and is part of the determinism contract:
    updates touch groups in that order, and each group's state is read and
    written by its own update only.
    """

    def __init__(self):
        self._params = {}
        self._m = {}
        self._v = {}
        self.step_count = 0

    def add(self, name, value, dtype=np.float32):
        if name in self._params:
            raise ValueError(f"duplicate parameter group {name!r}")
        arr = np.array(value, dtype=dtype)
        self._params[name] = arr
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def as_dict(self):
        return dict(self._params)

    def leaves(self, tape):
        """Enter every group into ``tape`` as a grad-requiring leaf."""
        return {name: tape.leaf(arr) for name, arr in self._params.items()}

    def copy(self):
        clone = ParamStore()
        for name, arr in self._params.items():
            clone.add(name, arr.copy(), dtype=arr.dtype)
            clone._m[name] = self._m[name].copy()
            clone._v[name] = self._v[name].copy()
        clone.step_count = self.step_count
        return clone


def adam_step(store, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update over all groups in ``store``.

    ``grads`` maps group name to gradient array; groups absent from the dict
    take a zero gradient (their moments still decay).  Non-finite gradients
    abort with a diagnostic naming the offending group.
    """
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store._params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        else:
            g = np.asarray(g, dtype=p.dtype)
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(f"non-finite gradient in group {name!r} at step {t}")
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class GradcheckReport:
    passed: bool
    max_rel_err: float
    worst_param: str = ""
    worst_index: int = -1
    num_coords: int = 0
    details: dict = field(default_factory=dict)


def gradcheck(loss_fn, params, h=1e-4, tol_rel=1e-3, max_coords_per_param=None, seed=0):
    """Compare tape gradients of ``loss_fn`` against central differences.

    ``loss_fn`` takes a dict of leaf Nodes and returns a scalar Node; it is
    re-invoked on float64 copies for every probe.  Relative error for one
    coordinate is |ad - fd| / max(|ad|, |fd|, 1e-4).  When a parameter has
    more coordinates than ``max_coords_per_param``, a seeded subset is probed.
    """
    params64 = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    def run(p):
        tape = Tape()
        leaves = {k: tape.leaf(v) for k, v in p.items()}
        out = loss_fn(leaves)
        return tape, leaves, out

    tape, leaves, out = run(params64)
    tape.backward(out)
    grads = {
        k: (leaves[k].grad if leaves[k].grad is not None else np.zeros_like(params64[k]))
        for k in params64
    }

    rng = np.random.default_rng(seed)
    max_err = 0.0
    worst = ("", -1)
    n_coords = 0
    details = {}
    for name, base in params64.items():
        flat = base.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = np.sort(rng.choice(n, size=max_coords_per_param, replace=False))
        else:
            coords = np.arange(n)
        g_flat = grads[name].reshape(-1)
        param_err = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(run(params64)[2].value)
            flat[i] = orig - h
            f_minus = float(run(params64)[2].value)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            ad = float(g_flat[i])
            err = abs(ad - fd) / max(abs(ad), abs(fd), 1e-4)
            n_coords += 1
            param_err = max(param_err, err)
            if err > max_err:
                max_err = err
                worst = (name, int(i))
        details[name] = param_err
    return GradcheckReport(
        passed=max_err < tol_rel,
        max_rel_err=max_err,
        worst_param=worst[0],
        worst_index=worst[1],
        num_coords=n_coords,
        details=details,
    )
