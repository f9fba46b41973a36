"""Dense numeric kernels everything else builds on.

Matrices are plain float64 numpy arrays (row-major, 2-D). The module provides
power-iteration spectral norms, a numerically stable softmax, a central
finite-difference gradient oracle, and a deterministic seeded RNG.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_SPECTRAL_START_TAG = "spectral-start"


class DomainError(ValueError):
    """An argument violates an operation's documented preconditions."""


class NumericError(ArithmeticError):
    """A computation produced or would propagate non-finite/underflowed values."""


class ConvergenceError(NumericError):
    """An iterative solve ran out of iterations.

    Carries the last estimate so callers can inspect how far the iteration got.
    """

    def __init__(self, message, last_estimate):
        super().__init__(message)
        self.last_estimate = last_estimate


def splitmix64(x):
    """One SplitMix64 step; the documented mixer behind seed derivation."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed, *tags):
    """Deterministically derive a child seed from a root seed and tags.

    Tags may be ints or strings; the derivation is pure integer mixing
    (SplitMix64), so children are identical on every platform.
    """
    h = splitmix64(int(seed) & _MASK64)
    for tag in tags:
        if isinstance(tag, str):
            for byte in tag.encode("utf-8"):
                h = splitmix64(h ^ byte)
        else:
            h = splitmix64(h ^ (int(tag) & _MASK64))
    return h


class Rng:
    """Seeded random stream (PCG64).

    Identical seeds give bit-identical streams across platforms; numpy
    guarantees PCG64 stream stability for a fixed integer seed.
    Instances are single-owner: do not share one across threads.
    """

    ALGORITHM = "pcg64"

    def __init__(self, seed):
        self.seed = int(seed) & _MASK64
        self._bits = np.random.PCG64(self.seed)
        self._gen = np.random.Generator(self._bits)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def spawn(self, *tags):
        """Independent child stream derived from the seed and tags (not from
        the consumed position of this stream)."""
        return Rng(derive_seed(self.seed, *tags))

    def state(self):
        return self._bits.state

    def set_state(self, state):
        self._bits.state = state


def as_matrix(m):
    """Validate and return m as a finite 2-D float64 array."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DomainError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    return a


def spectral_norm_trace(m, tol=1e-6, max_iter=1000):
    """Largest singular value of m plus the per-iteration estimate trace.

    Power iteration on the Gram matrix of the smaller side; the Rayleigh
    quotient sequence is monotone non-decreasing, and the estimates returned
    are its square roots. The start vector is derived from a fixed seed and
    the problem size, so repeated calls are bit-identical.
    """
    a = as_matrix(m)
    if not tol > 0:
        raise DomainError("tol must be positive")
    if max_iter < 1:
        raise DomainError("max_iter must be >= 1")
    if a.shape[0] < a.shape[1]:
        a = a.T
    gram = a.T @ a
    n = gram.shape[0]
    rng = Rng(derive_seed(0, _SPECTRAL_START_TAG, n))
    v = rng.uniform(0.5, 1.5, n)
    v /= np.linalg.norm(v)
    est = float(np.sqrt(max(v @ gram @ v, 0.0)))
    trace = [est]
    for _ in range(max_iter):
        w = gram @ v
        wn = float(np.linalg.norm(w))
        if wn == 0.0:
            return 0.0, trace + [0.0]
        v = w / wn
        new = float(np.sqrt(max(v @ gram @ v, 0.0)))
        trace.append(new)
        if abs(new - est) <= tol * max(new, np.finfo(np.float64).tiny):
            if not np.isfinite(new):
                raise NumericError("spectral norm estimate is non-finite")
            return new, trace
        est = new
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations "
        f"(last estimate {est:.6g})",
        last_estimate=est,
    )


def spectral_norm(m, tol=1e-6, max_iter=1000):
    """Largest singular value of m via power iteration (see spectral_norm_trace)."""
    value, _ = spectral_norm_trace(m, tol=tol, max_iter=max_iter)
    return value


def spectral_norm_uv(m, tol=1e-10, max_iter=10000):
    """Largest singular value with its left/right singular vectors (u, v).

    Same power iteration as spectral_norm but run until the singular *vector*
    settles (vectors converge slower than the value, and gradient callers
    need them tight). u = m v / sigma. A zero matrix returns zero vectors.
    """
    a = as_matrix(m)
    transposed = a.shape[0] < a.shape[1]
    b = a.T if transposed else a
    gram = b.T @ b
    n = gram.shape[0]
    rng = Rng(derive_seed(0, _SPECTRAL_START_TAG, n))
    v = rng.uniform(0.5, 1.5, n)
    v /= np.linalg.norm(v)
    moved = np.inf
    for _ in range(max_iter):
        w = gram @ v
        wn = float(np.linalg.norm(w))
        if wn == 0.0:
            zero_u = np.zeros(b.shape[0])
            zero_v = np.zeros(n)
            return (0.0, zero_v, zero_u) if transposed else (0.0, zero_u, zero_v)
        nxt = w / wn
        moved = float(np.max(np.abs(nxt - v)))
        v = nxt
        if moved <= tol:
            sigma = float(np.sqrt(max(v @ gram @ v, 0.0)))
            u = b @ v
            un = float(np.linalg.norm(u))
            u = u / un if un > 0 else u
            return (sigma, v, u) if transposed else (sigma, u, v)
    raise ConvergenceError(
        f"power iteration vectors did not settle in {max_iter} iterations "
        f"(last movement {moved:.3g})",
        last_estimate=float(np.sqrt(max(v @ gram @ v, 0.0))),
    )


def softmax(v):
    """Stabilized softmax of a 1-D vector: positive entries summing to one."""
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise DomainError(f"softmax expects a 1-D vector, got ndim={a.ndim}")
    if a.size == 0:
        raise DomainError("softmax of an empty vector is undefined")
    if not np.all(np.isfinite(a)):
        raise DomainError("softmax input has non-finite entries")
    e = np.exp(a - a.max())
    return e / e.sum()


def finite_diff_grad(f, p, h=1e-6):
    """Central-difference gradient of scalar f at parameter vector p.

    The per-coordinate estimate is (f(p + h e_i) - f(p - h e_i)) / 2h; this is
    the independent oracle trainer gradients are checked against.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise DomainError("parameter vector must be 1-D")
    if not h > 0:
        raise DomainError("h must be positive")
    grad = np.empty_like(p)
    for i in range(p.size):
        step = np.zeros_like(p)
        step[i] = h
        hi = float(f(p + step))
        lo = float(f(p - step))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad
