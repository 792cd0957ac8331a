"""Log-gamma, digamma and trigamma on the strictly positive reals.

All three functions are evaluated the same way: walk the argument upward
with the recurrence

    ln Gamma(x) = ln Gamma(x+1) - ln x
    psi(x)      = psi(x+1)      - 1/x
    psi'(x)     = psi'(x+1)     + 1/x^2

until it clears a fixed threshold, then apply the asymptotic (Bernoulli)
series there.  The walked correction is accumulated with Neumaier
compensation so the total rounding error stays near one ulp of the result.

Because the recurrence shifts for x and x+1 traverse identical lattice
points, the recurrence identities above hold to a few ulp of the larger
side, which is what downstream Dirichlet identities (MI + RMI = EPKL) rely
on.  Near the origin the functions blow up like -ln x, -1/x and 1/x^2, so
accuracy there is relative, not absolute.

Inputs may be scalars or numpy arrays; scalars come back as floats.
"""

from __future__ import annotations

import numpy as np

_THRESHOLD = 12.0
_HALF_LN_2PI = 0.9189385332046727  # ln(2*pi)/2

# B_{2n} / (2n*(2n-1)), the x^{-(2n-1)} coefficients of the ln Gamma series
_LGAMMA_COEFFS = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)
# B_{2n} / (2n), the x^{-2n} coefficients of the digamma series
_DIGAMMA_COEFFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# B_{2n}, the x^{-(2n+1)} coefficients of the trigamma series
_TRIGAMMA_COEFFS = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


def _checked(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr <= 0.0)):
        raise ValueError("argument must be finite and strictly positive")
    return arr


def _horner(u: np.ndarray, coeffs) -> np.ndarray:
    s = np.full_like(u, coeffs[-1])
    for c in reversed(coeffs[:-1]):
        s = s * u + c
    return s


def _walk(x: np.ndarray, term_fn):
    """Shift x above the threshold, compensated-summing term_fn along the way."""
    z = x.copy()
    acc = np.zeros_like(z)
    comp = np.zeros_like(z)
    while True:
        mask = z < _THRESHOLD
        if not mask.any():
            break
        vals = np.where(mask, term_fn(z), 0.0)
        t = acc + vals
        comp += np.where(np.abs(acc) >= np.abs(vals), (acc - t) + vals, (vals - t) + acc)
        acc = t
        z = np.where(mask, z + 1.0, z)
    return z, acc + comp


def lgamma(x):
    """ln Gamma(x) for x > 0.

    Accurate to ~1 ulp away from the roots at x=1 and x=2, where the error
    is a few 1e-15 absolute.
    """
    arr = _checked(x)
    z, walked = _walk(np.atleast_1d(arr), np.log)
    u = 1.0 / (z * z)
    series = _horner(u, _LGAMMA_COEFFS) / z
    out = (z - 0.5) * np.log(z) - z + _HALF_LN_2PI + series - walked
    return float(out[0]) if arr.ndim == 0 else out


def digamma(x):
    """psi(x) = d/dx ln Gamma(x) for x > 0."""
    arr = _checked(x)
    z, walked = _walk(np.atleast_1d(arr), lambda v: 1.0 / v)
    u = 1.0 / (z * z)
    out = np.log(z) - 0.5 / z - u * _horner(u, _DIGAMMA_COEFFS) - walked
    return float(out[0]) if arr.ndim == 0 else out


def trigamma(x):
    """psi'(x), the derivative of digamma, for x > 0.  Always positive."""
    arr = _checked(x)
    z, walked = _walk(np.atleast_1d(arr), lambda v: 1.0 / (v * v))
    u = 1.0 / (z * z)
    out = 1.0 / z + 0.5 * u + (u / z) * _horner(u, _TRIGAMMA_COEFFS) + walked
    return float(out[0]) if arr.ndim == 0 else out
