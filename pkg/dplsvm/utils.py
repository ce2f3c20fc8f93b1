import hashlib

import numpy as np

from dplsvm.errors import ValidationError


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def check_finite(name: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite values")
    return x


def check_labels(z) -> np.ndarray:
    """labels must be -1 or +1"""
    z = np.asarray(z, dtype=float)
    if not np.all((z == 1.0) | (z == -1.0)):
        raise ValidationError("labels must be in {-1, +1}")
    return z


def check_both_classes(z):
    z = check_labels(z)
    if len(z) < 2 or np.all(z == z[0]):
        raise ValidationError("both classes must be present")
    return z


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def is_symmetric(a: np.ndarray, tol: float = 1e-10) -> bool:
    return a.ndim == 2 and a.shape[0] == a.shape[1] and np.allclose(a, a.T, rtol=0, atol=tol)
