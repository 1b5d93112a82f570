# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled evaluation of subsampled-Gaussian RDP over a multiplier x order
grid.

For sampling probability q, noise multiplier s and integer order a >= 2 the
Renyi divergence is

    rho = log( sum_{k=0..a} C(a,k) (1-q)^(a-k) q^k exp(k(k-1)/(2 s^2)) ) / (a-1).

Because the binomial weights sum to one, the k=0 and k=1 terms fold into a
leading 1 and the sum becomes 1 + S with

    S = sum_{k=2..a} w_k * expm1(k(k-1)/(2 s^2)),   w_k = C(a,k)(1-q)^(a-k) q^k,

which is non-negative, so rho = log1p(S)/(a-1) is free of cancellation even
when rho is far below machine epsilon.  Weights follow the ratio recurrence
w_{k+1} = w_k * ((a-k)/(k+1)) * q/(1-q) in (mantissa, base-2 exponent) form,
so neither overflow nor underflow is possible for any finite input; the
exponential factors use expm1 while k(k-1)/(2 s^2) <= 36 (where the -1
matters) and a scaled plain exponential beyond.  One transcendental per
(multiplier, k) pair, shared across all orders.  Multipliers so small that
the scaled exponents would not fit in 64 bits fall back to a two-pass
log-sum-exp per order.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport expm1, exp, log, log1p, floor, frexp, ldexp, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double LN2 = 0.6931471805599453094172321
cdef double EXPM1_CUTOFF = 36.0     # exp(-36) ~ 2e-16: beyond this the -1 is sub-ulp


cdef inline void _scaled_add(double* ms, long* es, double mt, long et) nogil:
    # (ms, es) += (mt, et), both meaning m * 2^e with m in a sane range.
    # Terms more than 2^60 below the running sum cannot move the final
    # result (the sum of non-negative terms only grows), so they are dropped.
    cdef long d
    cdef int ex
    if mt == 0.0:
        return
    if ms[0] == 0.0:
        ms[0] = mt
        es[0] = et
        return
    d = et - es[0]
    if d > 1100:
        ms[0] = mt
        es[0] = et
    elif d > 60:
        ms[0] = mt + ldexp(ms[0], <int> (-d))
        es[0] = et
    elif d >= -60:
        ms[0] = ms[0] + ldexp(mt, <int> d)
    # renormalise occasionally so ms never drifts toward overflow
    if ms[0] > 1.34078079299425971e154:      # 2^512
        ms[0] = frexp(ms[0], &ex)
        es[0] += ex


cdef double _logspace_order(double x, long a, double lq, double l1q,
                            double log_odds, double* buf) nogil:
    # Two-pass log-sum-exp over ln t_k = ln w_k + e_k, plus the folded
    # leading 1 (ln = 0).  Only used for extreme multipliers where e_k
    # exceeds the scaled-arithmetic exponent range; accuracy of the
    # plain-log weight recurrence is ample there because the result is
    # astronomically large.
    cdef long k
    cdef double lw = log(0.5 * a * (a - 1)) + (a - 2) * l1q + 2.0 * lq
    cdef double m = 0.0
    cdef double e, t, ssum
    for k in range(2, a + 1):
        e = 0.5 * x * k * (k - 1)
        t = lw + e
        buf[k] = t
        if t > m:
            m = t
        if k < a:
            lw += log((<double> (a - k)) / (k + 1)) + log_odds
    if m == INFINITY:
        return INFINITY
    ssum = exp(-m)
    for k in range(2, a + 1):
        ssum += exp(buf[k] - m)
    return (m + log(ssum)) / (a - 1)


def sgm_rdp_matrix(double q, cnp.ndarray[cnp.float64_t, ndim=1] noise_multipliers,
                   cnp.ndarray[cnp.int64_t, ndim=1] orders):
    """Return rho[i, j] for multiplier i and integer order j."""
    cdef Py_ssize_t n = noise_multipliers.shape[0]
    cdef Py_ssize_t g = orders.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, g), dtype=np.float64)
    if n == 0 or g == 0 or q == 0.0:
        return out

    cdef long amax = 0
    cdef Py_ssize_t i, j
    cdef long a, k
    for j in range(g):
        if orders[j] > amax:
            amax = orders[j]

    cdef double s, x, e, lw2, odds, log_odds, mw, ms, rho, ssum
    cdef long ew, es, et
    cdef int ex
    cdef double lq = 0.0, l1q = 0.0
    if 0.0 < q < 1.0:
        lq = log(q)
        l1q = log1p(-q)
        odds = q / (1.0 - q)
        log_odds = lq - l1q
    else:
        odds = 0.0
        log_odds = 0.0
    # largest x for which every e_k/ln2 fits comfortably in a signed 64-bit
    # exponent; beyond it, take the log-space path
    cdef double x_scaled_max = 4.0e18 / ((<double> amax) * amax)

    # per-k exponential factors, shared across orders: value mT[k] * 2^eT[k]
    # stands for expm1(e_k) below the cutoff and exp(e_k) above it
    cdef double* mT = <double*> malloc((amax + 1) * sizeof(double))
    cdef long* eT = <long*> malloc((amax + 1) * sizeof(long))
    if mT == NULL or eT == NULL:
        free(mT)
        free(eT)
        raise MemoryError()

    try:
        for i in range(n):
            s = noise_multipliers[i]
            x = 1.0 / (s * s)           # s = inf -> x = 0 -> row stays zero
            if x == 0.0:
                continue
            if q == 1.0:
                for j in range(g):
                    out[i, j] = 0.5 * x * orders[j]
                continue
            if x > x_scaled_max:
                for j in range(g):
                    out[i, j] = _logspace_order(x, orders[j], lq, l1q, log_odds, mT)
                continue

            for k in range(2, amax + 1):
                e = 0.5 * x * k * (k - 1)
                if e <= EXPM1_CUTOFF:
                    # normalised mantissa so _scaled_add can compare magnitudes
                    # by exponent alone
                    mT[k] = frexp(expm1(e), &ex)
                    eT[k] = ex
                else:
                    et = <long> floor(e / LN2)
                    mT[k] = frexp(exp(e - et * LN2), &ex)
                    eT[k] = et + ex

            for j in range(g):
                a = orders[j]
                # w_2 = C(a,2) (1-q)^(a-2) q^2 in scaled form
                lw2 = log(0.5 * a * (a - 1)) + (a - 2) * l1q + 2.0 * lq
                ew = <long> floor(lw2 / LN2)
                mw = exp(lw2 - ew * LN2)
                ms = 0.0
                es = 0
                for k in range(2, a + 1):
                    _scaled_add(&ms, &es, mw * mT[k], ew + eT[k])
                    if k < a:
                        mw = mw * ((<double> (a - k)) / (k + 1)) * odds
                        mw = frexp(mw, &ex)
                        ew += ex
                if ms == 0.0 or es < -1150:
                    continue                     # S underflows: rho is 0 in doubles
                if es < 900:
                    ssum = ldexp(ms, <int> es)
                    rho = log1p(ssum) / (a - 1)
                else:
                    rho = (log(ms) + es * LN2) / (a - 1)
                out[i, j] = rho
    finally:
        free(mT)
        free(eT)
    return out
