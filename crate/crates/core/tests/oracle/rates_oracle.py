#!/usr/bin/env python3
"""Independent high-precision oracle for the analytic key-rate engine.

Re-derives every quantity from the photon-number expansion with mpmath at
50 significant digits and writes the frozen values consumed by the Rust
tests (tests/fixtures/rates_oracle.json). Run from the crate root:

    python3 tests/oracle/rates_oracle.py > tests/fixtures/rates_oracle.json
"""
import json

from mpmath import exp, factorial, log, mp, mpf, sqrt, cos, pi

mp.dps = 50

ALPHA_DB = mpf("0.2")
ETA_DET = mpf("0.2")
Y0 = mpf("5e-6")
E_D = mpf("0.015")
E0 = mpf("0.5")
F_REP = mpf("250e6")
F_EC = mpf("1.16")
MU_S = mpf("0.5")
MU_W = mpf("0.1")
V_SOURCE = mpf("0.97")
ALPHA_SQ = mpf("0.5")
MONITOR = mpf("0.1")
N_BLOCK = mpf("1e10")
EPS = mpf("1e-10")
N_MAX = 50


def h2(x):
    x = mpf(x)
    if x <= 0 or x >= 1:
        return mpf(0)
    return -x * log(x, 2) - (1 - x) * log(1 - x, 2)


def transmittance(d, alpha_db=ALPHA_DB, eta_det=ETA_DET):
    return mpf(10) ** (-alpha_db * mpf(d) / 10) * eta_det


def poisson_gains(eta, mu, y0=Y0, e_d=E_D, e0=E0):
    """Overall gain and QBER by explicit summation over photon numbers."""
    mu = mpf(mu)
    q = mpf(0)
    eq = mpf(0)
    for n in range(N_MAX + 1):
        p = exp(-mu) * mu ** n / factorial(n)
        yn = y0 + 1 - (1 - eta) ** n
        q += yn * p
        eq += (e0 * y0 + e_d * (1 - (1 - eta) ** n)) * p
    e = eq / q if q > 0 else mpf("0.5")
    return q, e


def clamp(x, lo, hi):
    return max(lo, min(hi, x))


def decoy(eta, mu_s=MU_S, mu_w=MU_W, y0=Y0, e_d=E_D):
    qs, es = poisson_gains(eta, mu_s, y0, e_d)
    qw, ew = poisson_gains(eta, mu_w, y0, e_d)
    y1l = (mu_s / (mu_s * mu_w - mu_w ** 2)) * (
        qw * exp(mu_w)
        - qs * exp(mu_s) * (mu_w ** 2 / mu_s ** 2)
        - ((mu_s ** 2 - mu_w ** 2) / mu_s ** 2) * y0
    )
    y1l = clamp(y1l, mpf(0), mpf(1))
    e1u = (ew * qw * exp(mu_w) - E0 * y0) / (y1l * mu_w)
    e1u = clamp(e1u, mpf(0), mpf("0.5"))
    q1l = y1l * mu_s * exp(-mu_s)
    return qs, es, y1l, e1u, q1l


def finite_penalty(n=N_BLOCK, eps=EPS):
    n = mpf(n)
    eps = mpf(eps)
    return 7 * sqrt(log(2 / eps, 2) / n) + (2 / n) * log(1 / eps, 2)


def bb84_row(d, q=mpf("0.5")):
    eta = transmittance(d)
    qs, es, y1l, e1u, q1l = decoy(eta)
    raw = q * (-qs * F_EC * h2(es) + q1l * (1 - h2(e1u)))
    r = max(raw, mpf(0))
    return {
        "distance_km": float(d),
        "q_mu": str(qs),
        "e_mu": str(es),
        "y1_lower": str(y1l),
        "e1_upper": str(e1u),
        "r_pp": str(r),
        "r_finite": str(max(mpf(0), r - finite_penalty())),
        "r_bps": str(r * F_REP),
    }


def e91_row(d, q=mpf("0.5")):
    eta = transmittance(d)
    qmu, emu = poisson_gains(eta, MU_S, Y0, (1 - V_SOURCE) / 2)
    v = 1 - 2 * emu
    s = 2 * sqrt(2) * v
    holevo = h2((1 + sqrt(max(mpf(0), (s / 2) ** 2 - 1))) / 2)
    raw = q * (1 - F_EC * h2(emu) - holevo)
    r = max(raw, mpf(0)) * qmu
    return {
        "distance_km": float(d),
        "q_mu": str(qmu),
        "e_mu": str(emu),
        "r_pp": str(r),
        "r_finite": str(max(mpf(0), r - finite_penalty())),
        "r_bps": str(r * F_REP),
    }


def cow_visibility(alpha_sq, dphi):
    return exp(-2 * mpf(alpha_sq) * (1 - cos(mpf(dphi))))


def cow_row(d, dphi, q=mpf("0.9") * (1 - MONITOR)):
    eta = transmittance(d)
    qmu, emu = poisson_gains(eta, ALPHA_SQ, Y0, E_D)
    e_ph = (1 - cow_visibility(ALPHA_SQ, dphi)) / 2
    raw = q * (-qmu * F_EC * h2(emu) + qmu * (1 - h2(e_ph)))
    r = max(raw, mpf(0))
    return {
        "distance_km": float(d),
        "dphi": float(dphi),
        "q_mu": str(qmu),
        "e_mu": str(emu),
        "e_ph": str(e_ph),
        "r_pp": str(r),
        "r_finite": str(max(mpf(0), r - finite_penalty())),
        "r_bps": str(r * F_REP),
    }


def e91_root():
    """Root of the V-parameterised E91 bracket with f = 1 by bisection."""

    def bracket(qber):
        v = 1 - 2 * qber
        s = 2 * sqrt(2) * v
        return 1 - h2(qber) - h2((1 + sqrt(max(mpf(0), (s / 2) ** 2 - 1))) / 2)

    lo, hi = mpf("0.05"), mpf("0.2")
    for _ in range(200):
        mid = (lo + hi) / 2
        if bracket(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def wilson(k, n, z=mpf("1.959963984540054")):
    k = mpf(k)
    n = mpf(n)
    p = k / n
    denom = 1 + z ** 2 / n
    centre = (p + z ** 2 / (2 * n)) / denom
    half = z * sqrt(p * (1 - p) / n + z ** 2 / (4 * n ** 2)) / denom
    return centre - half, centre + half


def main():
    grid = list(range(0, 121, 5))
    eta50 = transmittance(50)
    q50, e50 = poisson_gains(eta50, MU_S)
    wl, wh = wilson(30, 1000)
    out = {
        "binary_entropy_0_11": str(h2(mpf("0.11"))),
        "transmittance_37km": str(transmittance(37)),
        "gains_50km_mu05": {"q_mu": str(q50), "e_mu": str(e50)},
        "finite_penalty_1e6": str(finite_penalty(mpf("1e6"))),
        "finite_penalty_default": str(finite_penalty()),
        "e91_root_f1": str(e91_root()),
        "wilson_30_1000": [str(wl), str(wh)],
        "cow_25km_dphi03": cow_row(25, mpf("0.3")),
        "bb84": [bb84_row(d) for d in grid],
        "e91": [e91_row(d) for d in grid],
        "cow": [cow_row(d, 0) for d in grid],
        "cow_drift": [cow_row(d, mpf("0.3")) for d in grid],
    }
    print(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
