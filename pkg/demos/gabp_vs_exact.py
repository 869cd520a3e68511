"""Gaussian belief propagation on a chain and on a loopy graph.

On a tree the messages reproduce the exact marginals, means and precisions
alike. On a loopy graph the means still converge to the exact ones but the
precisions do not. Run with ``python3 demos/gabp_vs_exact.py``.
"""

import numpy as np

from spagnn.gabp import exact_marginals, gabp_run, random_mrf


def compare(title: str, tree: bool, seed: int) -> None:
    mrf = random_mrf(6, 2, np.random.default_rng(seed), tree=tree)
    res = gabp_run(mrf, max_iters=500, tol=1e-12)
    exact = exact_marginals(mrf)
    mean_dev = max(np.abs(g.mean - e.mean).max() for g, e in zip(res.marginals, exact))
    prec_dev = max(np.abs(g.precision - e.precision).max() for g, e in zip(res.marginals, exact))
    print(f"{title:6s} converged after {res.iterations:3d} sweeps: mean dev {mean_dev:.1e}, precision dev {prec_dev:.1e}")


if __name__ == "__main__":
    compare("tree", True, 1)
    compare("loopy", False, 2)
