"""End-to-end walkthrough: one training run, the whole value process.

Fits a kernel ridge estimator to discounted European put payoffs sampled
under the tilted training measure, then evaluates the fitted conditional
expectations at t = 0, 1, 2 on a handful of fresh nominal paths.  Each
row of the table compares the closed-form evaluation of the fit against
the exact Black-Scholes value at the same point, so you can see a single
regression producing prices at every time step at once.

Run time is a few seconds.  Increase N_TRAIN for tighter errors.
"""

import numpy as np

from kernelval import (BSConfig, GaussExpKernel, GroundTruth, MeasureSpec,
                       build_training_set, draw_paths, fit, payoff_function,
                       value_series_many)

N_TRAIN = 2000
N_SHOW = 6
PAYOFF = "european_put"


def main():
    cfg = BSConfig()  # s0 = 1, sigma = 0.2, r = 0, two steps, strike 1
    spec = MeasureSpec(gamma=0.45, seed=2024)
    kern = GaussExpKernel(alpha=4.0, beta=0.3, gamma=spec.gamma)

    ts = build_training_set(spec, payoff_function(cfg, PAYOFF), N_TRAIN,
                            payoff_id=PAYOFF)
    est = fit(ts, kern, lam=1e-5, payoff_id=PAYOFF)
    print(f"fitted {PAYOFF} on {N_TRAIN} tilted samples "
          f"(normal-equation residual {est.residual:.2e})")

    gt = GroundTruth(cfg, PAYOFF)  # quadrature reference values
    nominal = MeasureSpec(gamma=0.0, seed=2024)
    X = draw_paths(nominal, N_SHOW, stream=("walkthrough",))

    V_hat = value_series_many(est, X)
    V_true = gt.v_series(X)

    print(f"\nexact V_0 = {gt.v0():.6f}, fitted V_0 = {V_hat[0, 0]:.6f}")
    print("\npath increments      "
          + "".join(f"  V_hat(t={t})   V(t={t}) " for t in range(cfg.T + 1)))
    for i in range(N_SHOW):
        incr = " ".join(f"{z:+.3f}" for z in X[i, 0])
        cells = "".join(f"  {V_hat[i, t]:8.5f} {V_true[i, t]:8.5f}"
                        for t in range(cfg.T + 1))
        print(f"  ({incr})       {cells}")

    rel = np.abs(V_hat - V_true) / gt.v0()
    for t in range(cfg.T + 1):
        print(f"relative error at t={t}: mean {rel[:, t].mean():.4%}, "
              f"max {rel[:, t].max():.4%}")


if __name__ == "__main__":
    main()
