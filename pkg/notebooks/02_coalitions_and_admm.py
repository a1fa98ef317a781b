"""
Forming coalitions
==================

Greedy bottom-up merging with the cheap aggregate-trade estimate, the joint
plan of each coalition by consensus ADMM, and the exhaustive optimum for
comparison on a small instance.
"""

# %%
import io

import numpy as np

from coalgrid import (AdmmSettings, CoalitionValues, FullInfoEvaluator, LimitedInfoEvaluator,
                      admm_solve, bottom_up_form, generate_scenario, optimal_partition)

sc = generate_scenario(seed=11, N=5, T=48)
buildings, prices = list(sc.buildings), sc.prices
agents = list(range(sc.n_buildings))
table = CoalitionValues(buildings, prices)  # shared cache of coalition values

decentralised = sum(table.value((i,)) for i in agents)
print(f"everyone alone: {decentralised:.4f}")

# %%
# Limited information: only each coalition's aggregate grid trade is compared.
limited = bottom_up_form(agents, LimitedInfoEvaluator(prices), 3, buildings, prices,
                         table=table)
print("limited info  ", limited.coalitions, f"{limited.total:.4f}",
      f"({limited.admm_iterations} ADMM iterations)")

# Full information solves every candidate merge before choosing.
full = bottom_up_form(agents, FullInfoEvaluator(), 3, buildings, prices, table=table)
print("full info     ", full.coalitions, f"{full.total:.4f}",
      f"({full.admm_iterations} ADMM iterations)")

best = optimal_partition(agents, 3, buildings, prices, table=table)
print("best partition", best.coalitions, f"{best.total:.4f}")

# %%
# Inside a coalition: each agent only reports its coalition trade; the
# coordinator returns consensus targets and prices.  The trace shows the
# primal residual falling and the repaired (always feasible) cost settling.
members = max(full.coalitions, key=len)
trace = io.StringIO()
res = admm_solve([buildings[i] for i in members], prices, AdmmSettings(), trace=trace)
rows = np.genfromtxt(io.StringIO(trace.getvalue()), delimiter=",", names=True)
for k in (0, 9, 49, len(rows) - 1):
    if k < len(rows):
        r = rows[k]
        print(f"iter {int(r['iteration']):4d}  residual {r['residual']:.2e}  "
              f"cost {r['repaired_cost']:.5f}")
print(f"{res.iterations} iterations, converged={res.converged}, cost {res.cost:.5f}")
