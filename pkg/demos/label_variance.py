"""How much label noise does history averaging remove?

Prints the analytic mean and variance of one true-set component of the
history-averaged target next to a Monte Carlo estimate, and the implied
one-hot / history-average variance ratio.

    python demos/label_variance.py
"""

from halstream.theory import (
    LabelProcessParams, analytic_mean_t_h, analytic_var_t_h, mc_estimate_t_h, variance_ratio,
)


def main():
    k, u = 5, 0.9
    print(f"k={k}, u={u}")
    print(f"{'h':>4} {'mean':>8} {'var':>10} {'mc var':>10} {'OH/HA':>7}")
    for h in (1, 2, 5, 10, 25, 50):
        p = LabelProcessParams(k=k, n=k, h=h, u=u)
        est = mc_estimate_t_h(p, 200_000, seed=h)
        print(f"{h:>4} {analytic_mean_t_h(p):8.4f} {analytic_var_t_h(p):10.6f} {est.variance:10.6f} "
              f"{variance_ratio(k, h, u):7.2f}")


if __name__ == "__main__":
    main()
