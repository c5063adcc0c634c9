"""Bayesian optimization of a CNN head, step by step.

1. Fit a Gaussian process to a handful of noise-free observations of a 1-D
   function and look at the posterior and expected improvement.
2. Run the full search loop over a 48-configuration head space with a cheap
   synthetic objective standing in for proxy-network training, and compare
   it with random search at the same budget.

Run with ``python demos/bayesian_search.py``.
"""

import numpy as np

from tascforge import gp
from tascforge.bo import bayes_search, random_search
from tascforge.space import SearchSpace, encode, enumerate_space

# -- 1. the surrogate ----------------------------------------------------------

f = lambda x: np.sin(6 * x) * x
x_train = np.array([[0.05], [0.3], [0.55], [0.9]])
y_train = f(x_train).ravel()

params = gp.optimize_hyperparams(x_train, y_train)
print("chosen kernel:", params.to_dict())
model = gp.fit(x_train, y_train, params)

grid = np.linspace(0, 1, 11).reshape(-1, 1)
mu, var = gp.posterior_batch(model, grid)
ei = gp.expected_improvement(mu, var, y_train.max())
print("\n    x     f(x)    mean    std      EI")
for x, m, v, e in zip(grid.ravel(), mu, var, ei):
    print(f"{x:5.2f} {f(x):8.4f} {m:7.4f} {np.sqrt(v):6.4f} {e:8.5f}")
print("next query (EI argmax on the grid):", grid[np.argmax(ei), 0])

# -- 2. the search loop --------------------------------------------------------

space = SearchSpace(conv_counts=(0,), pool_counts=(0,), fc_counts=(1,),
                    fc_neurons=(64, 128, 256, 512),
                    fc_activations=("Sigmoid", "TanH", "ReLU", "ELU"),
                    fc_dropouts=(0.1, 0.3, 0.5))
print(f"\nhead space: {space.size()} configurations, encoded in {space.dim} dims")

penalty = {"ELU": 0.0, "ReLU": 0.03, "TanH": 0.08, "Sigmoid": 0.15}


def pseudo_accuracy(config, index=0):
    """A smooth stand-in for validation accuracy: 256 neurons, dropout 0.3, ELU is best."""
    fc = config.fcs[0]
    n = space.fc_neurons.index(fc.neurons)
    d = space.fc_dropouts.index(fc.dropout)
    return 0.95 - 0.0625 * (n - 2) ** 2 - 0.15 * (d - 1) ** 2 - penalty[fc.activation]


truth = max(enumerate_space(space, 100), key=pseudo_accuracy)
print("true optimum:", truth.describe(), f"{pseudo_accuracy(truth):.4f}")

result = bayes_search(space, pseudo_accuracy, k0=5, m_total=20, rng=np.random.default_rng(0))
print("\n  #  accuracy  running best  configuration")
for i, (obs, best) in enumerate(zip(result.history, result.running_best())):
    tag = "init" if i < result.k0 else "EI"
    print(f"{i:3d}  {obs.accuracy:8.4f}  {best:12.4f}  {obs.config.describe()}  [{tag}]")
print("encoded best:", np.round(encode(space, result.best.config), 2))

bo = [bayes_search(space, pseudo_accuracy, 5, 20, rng=np.random.default_rng(s)).best.accuracy
      for s in range(10)]
rs = [random_search(space, pseudo_accuracy, 20, np.random.default_rng(s)).best.accuracy
      for s in range(10)]
print(f"\nover 10 seeds at 20 evaluations: BO median {np.median(bo):.4f}, "
      f"random median {np.median(rs):.4f}")
