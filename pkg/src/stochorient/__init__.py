"""stochorient: exact tooling for correlated stochastic orienteering.

Submodules:

- ``core``: instance data model, truncated means, start rewards, file IO
- ``policy``: policy types, exact evaluators, seeded Monte Carlo
- ``oracle``: exact adaptive/non-adaptive optima at desk scale
- ``adversarial``: instance generators, including the adaptivity-gap family
- ``detsolve``: deterministic orienteering and deadline solvers
- ``lp``: dense simplex and the per-guess orienteering LP machinery
- ``csko``: structural decomposition, configuration LP, reductions
- ``cli``: command line front end
"""

__version__ = "0.1.0"
