#!/usr/bin/env python3
"""Arbitrary-precision recomputation of the closed-form cost figures.

Used to freeze the expected values asserted by the Rust test suites.
Units: 1 kB = 1024 B, 1 MB = 1024 kB, 1 GB = 10^6 kB.
"""
from mpmath import mp, mpf, log, exp

mp.dps = 40

KB = mpf(1024)
MB = KB * 1024


def storage_cost(b, n, c, t, y, r, q, lam):
    layers = log(b / (c * t * r)) / log(q * r)
    return t * y + b / (n * r * lam) + (2 * q - 1) * b * y / (n * r * c * lam) * layers


def fraud_proof(b, c, t, y, r, q, d):
    layers = log(b / (c * t * r)) / log(q * r)
    return (d - 1) * c + d * y * (q - 1) * layers


def tail_f(eta, rho):
    x = (1 - eta) * exp(rho)
    return (x - 1) ** 2 / (exp(rho) * (x + 1))


if __name__ == "__main__":
    b = 12 * MB
    n = 9000
    c = 48 * KB
    t, y, r, q, d = 16, 32, mpf("0.25"), 8, 8
    eta = mpf("0.875")
    for beta in (mpf("0.49"), mpf("0.33")):
        lam = (1 - 2 * beta) / log(1 / (1 - eta))
        x = storage_cost(b, n, c, t, y, r, q, lam)
        print(f"beta={beta} lambda={lam} (1/{1/lam})")
        print(f"  X = {x} B = {x / KB} kB")
        print(f"  NX = {n * x} B = {n * x / KB / 10**6} GB(10^6 kB)")
    p = fraud_proof(b, c, t, y, r, q, d)
    print(f"P = {p} B = {p / KB} kB")
    m = b / (c * r)
    print(f"M = {m}, chunks/node at lambda=1/150: {m / (n * mpf(1) / 150)}")
    print(f"f(0.875, 3) = {tail_f(eta, 3)}")
    print(f"f(0.875, 2.2) = {tail_f(eta, mpf('2.2'))}")
