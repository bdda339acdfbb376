#!/usr/bin/env python3
"""Arbitrary-precision oracle for the frozen constants asserted in the C++ tests.

Run `python3 gen_expected.py` and copy the printed values into the tests.
Every closed-form expectation in the test suites traces back to one of the
lines below; the C++ code under test is never consulted here.
"""

import mpmath as mp

mp.mp.dps = 50


def sigmoid(x):
    return 1 / (1 + mp.e**-x)


def softplus(x):
    return mp.log(1 + mp.e**x)


def as_double(x):
    return mp.nstr(x, 17)


CASES = [
    ("sigmoid(2.5)", sigmoid(mp.mpf("2.5"))),
    ("sigmoid(0.3)", sigmoid(mp.mpf("0.3"))),  # d/dw softplus(w*x) at w=0.3, x=1
    ("softplus(0) = ln 2", softplus(0)),
    ("softplus(-2.5)", softplus(mp.mpf("-2.5"))),
    ("softplus(-2.9)", softplus(mp.mpf("-2.9"))),
    ("log(8/11)", mp.log(mp.mpf(8) / 11)),  # softmax([ln 8,0,0,0])[0]
    ("-ln 4", -mp.log(4)),
    ("-3 ln 4", -3 * mp.log(4)),
    ("e^0.1", mp.e ** mp.mpf("0.1")),  # per-token confidence ratio at delta=0.1
]

if __name__ == "__main__":
    for name, value in CASES:
        print(f"{name:24s} = {as_double(value)}")
