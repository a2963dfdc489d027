"""How the KL ball reweights scenarios as the radius grows.

For one fixed commitment the worst-case expected recourse over the ball
``KL(P || P_o) <= rho`` is an exponential tilt of the nominal weights
toward expensive scenarios. This script prints the tilted weights, the
matching dual point ``(mu, zeta)`` and the two objective values, which
agree, for a small three-scenario example.

    python3 demos/worst_case_tilt.py
"""

import math

import numpy as np

from drmuc.dro import dual_minimizer, r_total, worst_case_expectation


def main():
    Q = np.array([18.0, 24.0, 41.0])  # dispatch cost in each scenario ($)
    pi = np.array([0.5, 0.3, 0.2])  # cluster frequencies
    cap = -math.log(pi[np.argmax(Q)])
    print(f"nominal expectation {pi @ Q:.4f}, worst scenario {Q.max():.1f}")
    print(f"beyond rho = {cap:.4f} the adversary puts all mass on the worst scenario\n")
    print(f"{'rho':>6} {'worst case':>11} {'dual value':>11} {'mu':>9} {'zeta':>9}  weights")
    for rho in (0.0, 0.05, 0.2, 0.5, 1.0, 2.0):
        value, wc = worst_case_expectation(Q, pi, rho)
        if rho > 0:
            mu, zeta = dual_minimizer(Q, pi, rho, q_max=Q.max() + 1e-9, k_max=50.0)
            dual = mu + rho * zeta + r_total(Q, pi, mu, zeta)
            dual_txt = f"{dual:11.4f} {mu:9.4f} {zeta:9.3g}"
        else:
            dual_txt = f"{'-':>11} {'-':>9} {'-':>9}"
        weights = " ".join(f"{p:.3f}" for p in wc.probabilities)
        print(f"{rho:6.2f} {value:11.4f} {dual_txt}  {weights}")


if __name__ == "__main__":
    main()
