"""Backend-facing tests for the subsampled-Gaussian RDP kernel: agreement
with high-precision reference values, agreement between the compiled and
pure-numpy implementations, input validation, and analytic edge cases."""

from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idpacct import _kernel_numpy
from idpacct.kernel import BACKEND, sgm_rdp_matrix
from idpacct.rdp_math import default_orders

from conftest import max_rel_diff

# 60-digit arbitrary-precision evaluations of
#   rho_alpha = log(sum_k C(alpha,k) (1-q)^(alpha-k) q^k e^{k(k-1)/(2 s^2)})
#               / (alpha - 1)
# spanning tiny/huge rho, tiny/huge noise, and the q = 1 Gaussian edge.
_REFERENCE_RHO = [
    (0.01, 1.0, 2, 0.00017181342207454793),
    (0.01, 1.0, 16, 3.0878507836962446),
    (0.01, 1.0, 64, 27.32173187455178),
    (0.1, 0.5, 2, 0.42916959059789968),
    (0.1, 0.5, 8, 13.368474179442488),
    (0.1, 2.0, 32, 1.6272023010194358),
    (0.001, 4.0, 2, 6.4494456838091903e-8),
    (0.001, 1.0, 13, 1.220375664755585e-5),
    (0.5, 0.5, 4, 7.0758119556209987),
    (0.5, 8.0, 256, 1.3233661351161786),
    (1.0, 1.0, 4, 2.0),
    (0.0001, 1.0, 128, 54.717137262890147),
    (0.3, 0.1, 3, 148.1940407935111),
    (0.2, 0.001, 2, 999996.78112417513),
    (1e-06, 10.0, 2, 1.0050167084168007e-14),
    (0.02, 0.3, 32, 173.73956048185195),
]


@pytest.mark.parametrize("q,sigma,alpha,expected", _REFERENCE_RHO)
def test_reference_values_default_backend(q, sigma, alpha, expected):
    got = sgm_rdp_matrix(q, np.asarray([sigma]), np.asarray([alpha]))[0, 0]
    assert got == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("q,sigma,alpha,expected", _REFERENCE_RHO)
def test_reference_values_numpy_backend(q, sigma, alpha, expected):
    got = _kernel_numpy.sgm_rdp_matrix(q, np.asarray([sigma]),
                                       np.asarray([alpha], dtype=np.int64))[0, 0]
    assert got == pytest.approx(expected, rel=1e-13)


def test_backends_agree_across_regimes():
    orders = np.concatenate([default_orders(), [512, 1024]])
    mults = np.asarray([1e-4, 1e-2, 0.3, 0.9, 1.0, 1.7, 8.0, 1e3, 1e6])
    worst = 0.0
    for q in (0.0, 1e-6, 1e-3, 0.05, 0.3, 0.9, 1.0):
        a = sgm_rdp_matrix(q, mults, orders)
        b = _kernel_numpy.sgm_rdp_matrix(q, mults, orders.astype(np.int64))
        worst = max(worst, max_rel_diff(a, b))
    assert worst <= 1e-10


def test_extension_opt_out_env_var():
    code = ("import idpacct.kernel as k; print(k.BACKEND)")
    env = dict(os.environ, IDPACCT_NO_EXTENSION="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    assert BACKEND in ("compiled", "numpy")


def test_zero_sampling_rate_gives_zero_curve():
    out = sgm_rdp_matrix(0.0, np.asarray([0.5, 1.0, 2.0]), np.asarray([2, 3, 64]))
    assert np.all(out == 0.0)


def test_infinite_multiplier_gives_zero_curve():
    out = sgm_rdp_matrix(0.3, np.asarray([np.inf]), np.asarray([2, 17]))
    assert np.all(out == 0.0)


def test_full_sampling_reduces_to_gaussian():
    sigmas = np.asarray([0.5, 1.0, 3.0])
    orders = np.asarray([2, 5, 33])
    out = sgm_rdp_matrix(1.0, sigmas, orders)
    expected = orders[None, :] / (2.0 * sigmas[:, None] ** 2)
    assert max_rel_diff(out, expected) <= 1e-14


@pytest.mark.parametrize("bad_call", [
    lambda: sgm_rdp_matrix(-0.1, np.asarray([1.0]), np.asarray([2])),
    lambda: sgm_rdp_matrix(1.1, np.asarray([1.0]), np.asarray([2])),
    lambda: sgm_rdp_matrix(0.5, np.asarray([0.0]), np.asarray([2])),
    lambda: sgm_rdp_matrix(0.5, np.asarray([-1.0]), np.asarray([2])),
    lambda: sgm_rdp_matrix(0.5, np.asarray([np.nan]), np.asarray([2])),
    lambda: sgm_rdp_matrix(0.5, np.asarray([1.0]), np.asarray([1])),
    lambda: sgm_rdp_matrix(0.5, np.asarray([1.0]), np.asarray([2.5])),
    lambda: sgm_rdp_matrix(0.5, np.asarray([[1.0]]), np.asarray([2])),
])
def test_rejects_bad_inputs(bad_call):
    with pytest.raises((ValueError, TypeError)):
        bad_call()


@settings(max_examples=60, deadline=None)
@given(q=st.floats(0.0, 1.0), sigma=st.floats(1e-3, 1e3),
       alpha=st.integers(2, 300))
def test_rho_nonnegative_finite_and_monotone_in_order(q, sigma, alpha):
    orders = np.asarray(sorted({2, alpha, alpha + 1, 2 * alpha}))
    row = sgm_rdp_matrix(q, np.asarray([sigma]), orders)[0]
    assert np.all(np.isfinite(row)) and np.all(row >= 0.0)
    # Renyi divergence is nondecreasing in the order
    assert np.all(np.diff(row) >= -1e-12 * np.maximum(row[:-1], 1.0))


@settings(max_examples=40, deadline=None)
@given(q=st.floats(1e-6, 1.0), sigma=st.floats(1e-2, 1e2))
def test_rho_monotone_in_sampling_rate(q, sigma):
    orders = np.asarray([2, 8, 32])
    lo = sgm_rdp_matrix(q * 0.5, np.asarray([sigma]), orders)[0]
    hi = sgm_rdp_matrix(q, np.asarray([sigma]), orders)[0]
    assert np.all(hi >= lo - 1e-12 * np.maximum(hi, 1.0))


@settings(max_examples=40, deadline=None)
@given(q=st.floats(1e-6, 1.0), sigma=st.floats(1e-2, 1e2))
def test_rho_decreasing_in_noise(q, sigma):
    orders = np.asarray([2, 8, 32])
    noisy = sgm_rdp_matrix(q, np.asarray([sigma * 2]), orders)[0]
    base = sgm_rdp_matrix(q, np.asarray([sigma]), orders)[0]
    assert np.all(noisy <= base + 1e-12 * np.maximum(base, 1.0))
