"""GF(2^8) arithmetic kernels for byte-wise polynomial secret sharing.

The field is GF(2^8) with reduction polynomial x^8 + x^4 + x^3 + x + 1
(0x11B); addition and subtraction are both XOR. Scalar operations go through
precomputed exp/log tables. The batch kernels below (polynomial evaluation,
Lagrange and Neville interpolation at x=0) are the only hot numeric inner
loops in the package: the exhaustive sharing tests and the benchmark drive
them tens of thousands of times, so they carry numba @njit implementations.

A pure-numpy fallback exists for every kernel and is selected when numba is
unavailable or when the environment variable KARY_PURE_NUMPY is set to a
truthy value ("1", "true", "yes", "on"). `BACKEND` reports which path is
active; both paths are importable directly so tests and the benchmark can
compare them. See benchmarks/bench_gf256.py.
"""

from __future__ import annotations

import os

import numpy as np

REDUCING_POLY = 0x11B

PURE_NUMPY_ENV = "KARY_PURE_NUMPY"
_TRUTHY = {"1", "true", "yes", "on"}


def _build_tables() -> tuple[np.ndarray, np.ndarray]:
    # exp/log tables for generator 0x03; EXP is doubled so LOG[a] + LOG[b]
    # indexes without a mod 255.
    exp = np.zeros(510, dtype=np.uint8)
    log = np.zeros(256, dtype=np.uint16)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        doubled = ((x << 1) ^ (0x1B if x & 0x80 else 0x00)) & 0xFF
        x ^= doubled
    exp[255:] = exp[:255]
    return exp, log


EXP, LOG = _build_tables()

_INV = np.zeros(256, dtype=np.uint8)
_INV[1:] = EXP[(255 - LOG[1:]).astype(np.intp)]

_MUL = np.zeros((256, 256), dtype=np.uint8)
_MUL[1:, 1:] = EXP[LOG[1:].astype(np.intp)[:, None] + LOG[1:].astype(np.intp)[None, :]]


def _check_byte(value: int, name: str) -> None:
    if not isinstance(value, (int, np.integer)) or not 0 <= int(value) <= 255:
        raise ValueError(f"{name} must be an integer in 0..255, got {value!r}")


def gf_mul(a: int, b: int) -> int:
    """Product of two field elements."""
    _check_byte(a, "a")
    _check_byte(b, "b")
    return int(_MUL[a, b])


def gf_inv(a: int) -> int:
    """Multiplicative inverse; zero has none."""
    _check_byte(a, "a")
    if a == 0:
        raise ZeroDivisionError("0 has no multiplicative inverse in GF(2^8)")
    return int(_INV[a])


# ---------------------------------------------------------------------------
# Batch kernels, pure-numpy path.
#
# Shapes: `coeffs` is (rows, degree+1) with the constant term in column 0,
# one independent polynomial per row. `xs` is (npoints,), `ys` is
# (npoints, rows). All arrays are uint8.


def eval_polys_numpy(coeffs: np.ndarray, x: int) -> np.ndarray:
    """Evaluate each row's polynomial at the scalar point x (Horner)."""
    acc = coeffs[:, -1].copy()
    for m in range(coeffs.shape[1] - 2, -1, -1):
        acc = _MUL[acc, x] ^ coeffs[:, m]
    return acc


def lagrange_zero_numpy(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Interpolate the rows of ys at x=0 by Lagrange basis weights."""
    npts = xs.shape[0]
    out = np.zeros(ys.shape[1], dtype=np.uint8)
    for i in range(npts):
        w = np.uint8(1)
        for j in range(npts):
            if j != i:
                w = _MUL[_MUL[w, xs[j]], _INV[xs[i] ^ xs[j]]]
        out ^= _MUL[w, ys[i]]
    return out


def neville_zero_numpy(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Interpolate the rows of ys at x=0 by the Neville/Aitken recurrence.

    P[i][j] spans points i..i+j; at x=0 in characteristic 2 the update is
    P[i][j] = (x[i+j] * P[i][j-1] ^ x[i] * P[i+1][j-1]) / (x[i] ^ x[i+j]).
    """
    p = ys.copy()
    npts = xs.shape[0]
    for span in range(1, npts):
        for i in range(npts - span):
            dinv = _INV[xs[i] ^ xs[i + span]]
            num = _MUL[xs[i + span], p[i]] ^ _MUL[xs[i], p[i + 1]]
            p[i] = _MUL[num, dinv]
    return p[0]


def _want_numba() -> bool:
    return os.environ.get(PURE_NUMPY_ENV, "").strip().lower() not in _TRUTHY


eval_polys_jit = None
lagrange_zero_jit = None
neville_zero_jit = None

if _want_numba():
    try:
        from numba import njit
    except ImportError:
        njit = None

    if njit is not None:

        @njit(cache=True)
        def _mul(a, b):
            if a == 0 or b == 0:
                return 0
            return EXP[LOG[a] + LOG[b]]

        @njit(cache=True)
        def _inv(a):
            return EXP[255 - LOG[a]]

        @njit(cache=True)
        def eval_polys_jit(coeffs, x):  # noqa: F811
            rows, ncoef = coeffs.shape
            out = np.empty(rows, dtype=np.uint8)
            for r in range(rows):
                acc = coeffs[r, ncoef - 1]
                for m in range(ncoef - 2, -1, -1):
                    acc = _mul(acc, x) ^ coeffs[r, m]
                out[r] = acc
            return out

        @njit(cache=True)
        def lagrange_zero_jit(xs, ys):  # noqa: F811
            npts, rows = ys.shape
            out = np.zeros(rows, dtype=np.uint8)
            for i in range(npts):
                w = 1
                for j in range(npts):
                    if j != i:
                        w = _mul(w, _mul(xs[j], _inv(xs[i] ^ xs[j])))
                for c in range(rows):
                    out[c] ^= _mul(w, ys[i, c])
            return out

        @njit(cache=True)
        def neville_zero_jit(xs, ys):  # noqa: F811
            p = ys.copy()
            npts, rows = p.shape
            for span in range(1, npts):
                for i in range(npts - span):
                    xa = xs[i]
                    xb = xs[i + span]
                    dinv = _inv(xa ^ xb)
                    for c in range(rows):
                        num = _mul(xb, p[i, c]) ^ _mul(xa, p[i + 1, c])
                        p[i, c] = _mul(num, dinv)
            return p[0].copy()


if eval_polys_jit is not None:
    BACKEND = "numba"
    eval_polys = eval_polys_jit
    lagrange_zero = lagrange_zero_jit
    neville_zero = neville_zero_jit
else:
    BACKEND = "numpy"
    eval_polys = eval_polys_numpy
    lagrange_zero = lagrange_zero_numpy
    neville_zero = neville_zero_numpy


def warmup() -> None:
    """Trigger JIT compilation of the active kernels on tiny inputs."""
    coeffs = np.array([[1, 2], [3, 4]], dtype=np.uint8)
    xs = np.array([1, 2], dtype=np.uint8)
    ys = np.array([[5, 6], [7, 8]], dtype=np.uint8)
    eval_polys(coeffs, 3)
    lagrange_zero(xs, ys)
    neville_zero(xs, ys)
