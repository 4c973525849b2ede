#!/usr/bin/env python3
"""One-off derivation of the pendulum benchmark's frozen LQR constants.

The benchmark embeds the cost-to-go matrix P and gain K as literal numbers
so results are identical across platforms; rerun this script to regenerate
them (requires scipy, which the package itself does not depend on).

Upright linearization of adot = w, wdot = sin(a) + u:

    A = [[0, 1], [1, 0]],  B = [[0], [1]],  Q = diag(2, 1),  R = [[1]].
"""
import numpy as np
from scipy.linalg import solve_continuous_are

A = np.array([[0.0, 1.0], [1.0, 0.0]])
B = np.array([[0.0], [1.0]])
Q = np.diag([2.0, 1.0])
R = np.array([[1.0]])

P = solve_continuous_are(A, B, Q, R)
K = np.linalg.solve(R, B.T @ P)[0]

residual = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
print("P = [")
for row in P:
    print("    [%s]," % ", ".join(f"{v:.16g}" for v in row))
print("]")
print("K = [%s]" % ", ".join(f"{v:.16g}" for v in K))
print(f"Riccati residual max |.| = {np.abs(residual).max():.3e}")
print(f"closed-loop eigenvalues: {np.linalg.eigvals(A - B @ K[None, :])}")
