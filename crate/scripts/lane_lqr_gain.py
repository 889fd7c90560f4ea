"""Synthesize the default lane-keeping state-feedback gain.

Continuous-time LQR on the lateral bicycle model with state
[y, nu, psi, r], Q = diag(10, 1, 10, 1), R = 50.  The printed gain is the
`lane_gain` default baked into the scenario registry.
"""
import sys

import numpy as np
from scipy.linalg import solve_continuous_are

M, a, b, Cf, Cr, Iz = 1650.0, 1.11, 1.59, 98800.0, 133000.0, 2315.3


def lane_matrices(v0):
    A = np.array([
        [0.0, 1.0, v0, 0.0],
        [0.0, -(Cf + Cr) / (M * v0), 0.0, (b * Cr - a * Cf) / (M * v0) - v0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, (b * Cr - a * Cf) / (Iz * v0), 0.0, -(a * a * Cf + b * b * Cr) / (Iz * v0)],
    ])
    B = np.array([[0.0], [Cf / M], [0.0], [a * Cf / Iz]])
    return A, B


def main():
    v0 = float(sys.argv[1]) if len(sys.argv) > 1 else 27.7
    A, B = lane_matrices(v0)
    Q = np.diag([10.0, 1.0, 10.0, 1.0])
    R = np.array([[50.0]])
    P = solve_continuous_are(A, B, Q, R)
    K = np.linalg.solve(R, B.T @ P)
    print("lane_gain = [" + ", ".join(repr(float(k)) for k in K.ravel()) + "]")
    print("closed-loop eigenvalues:", np.linalg.eigvals(A - B @ K))


if __name__ == "__main__":
    main()
