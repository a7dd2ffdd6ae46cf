"""Learning-curve protocol: sample, train each method, score held-out triplets.

Per seed, every view draws one pool of distinct triplets from its oracle.
The first ``test_per_view`` triplets of the pool are the test set, and
training sets are prefixes of the remainder, so larger budgets extend
smaller ones.
"""

from dataclasses import dataclass

import numpy as np

from .data import TripletDataset, sample_triplets
from .evaluation import performance_gain, triplet_error
from .solver import cross_validate, train


def stream_seed(*keys):
    """Deterministic 63-bit seed derived from integer keys."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint64)[0] >> np.uint64(1))


def view_budgets(num_views, budget, sweep_views=None, fixed_budget=None):
    """Training count of every view when the swept views get ``budget``."""
    sweep = set(range(num_views)) if sweep_views is None else set(sweep_views)
    if fixed_budget is None and len(sweep) != num_views:
        raise ValueError("views outside the sweep need a fixed budget")
    return [budget if t in sweep else fixed_budget for t in range(num_views)]


def sample_pools(views, counts, test_per_view, seed):
    """``(train_pool, test)`` per view: ``counts[t]`` training and ``test_per_view`` test triplets."""
    pools, tests = [], []
    for t, c in enumerate(counts):
        S = sample_triplets(views, t, c + test_per_view, seed=stream_seed(seed, t))
        tests.append(S[:test_per_view])
        pools.append(S[test_per_view:])
    return pools, tests


@dataclass(frozen=True)
class CurveResult:
    budgets: tuple
    methods: tuple
    errors: np.ndarray  # (method, seed, budget, view)
    gammas: np.ndarray  # (method, seed, budget) regularization actually used

    def mean_curve(self, method):
        m = self.methods.index(method)
        return self.errors[m].mean(axis=(0, 2))

    def view_curve(self, method):
        m = self.methods.index(method)
        return self.errors[m].mean(axis=0)

    def rows(self, method):
        """``(budget, view, error)`` rows, per view and ``"mean"``, averaged over seeds."""
        per_view = self.view_curve(method)
        out = []
        for b, budget in enumerate(self.budgets):
            out.extend((budget, t, float(e)) for t, e in enumerate(per_view[b]))
            out.append((budget, "mean", float(per_view[b].mean())))
        return out

    def gains(self, reference="independent"):
        ref = self.mean_curve(reference)
        return {m: performance_gain(self.budgets, self.mean_curve(m), ref) for m in self.methods}


def _gamma_for(gammas, method, budget):
    g = gammas[method] if isinstance(gammas, dict) else gammas
    if isinstance(g, dict):
        return float(g[budget])
    return float(g)


def run_curve(
    views,
    budgets,
    methods,
    cfg,
    seeds=(0,),
    test_per_view=1000,
    sweep_views=None,
    fixed_budget=None,
    gammas=None,
    cv_grid=None,
    features=None,
):
    """Triplet test error of each method at each budget, per seed and view.

    Regularization is either fixed (``gammas``: one value, a per-method
    dict, or a per-method dict of per-budget values, with ``beta = 1``) or
    chosen by 5-fold cross-validation over ``cv_grid`` at every point.
    """
    budgets = tuple(int(b) for b in budgets)
    methods = tuple(methods)
    if (gammas is None) == (cv_grid is None):
        raise ValueError("give exactly one of gammas or cv_grid")
    T = views.num_views
    plans = [view_budgets(T, b, sweep_views, fixed_budget) for b in budgets]
    top = [max(p[t] for p in plans) for t in range(T)]
    errors = np.empty((len(methods), len(seeds), len(budgets), T))
    used = np.empty((len(methods), len(seeds), len(budgets)))
    for s, seed in enumerate(seeds):
        pools, tests = sample_pools(views, top, test_per_view, seed)
        for b, plan in enumerate(plans):
            data = TripletDataset(views.num_objects, tuple(P[:n] for P, n in zip(pools, plan)), features)
            for m, method in enumerate(methods):
                run_cfg = cfg.replace(mode=method, seed=stream_seed(seed, 7919))
                if cv_grid is not None:
                    gamma = cross_validate(data, run_cfg, cv_grid).best
                else:
                    gamma = _gamma_for(gammas, method, budgets[b])
                model = train(data, run_cfg.replace(beta=1.0, gamma=gamma))
                errors[m, s, b] = triplet_error(model, tests, features).per_view
                used[m, s, b] = gamma
    return CurveResult(budgets, methods, errors, used)
