"""
One building, then two
======================

A battery owner facing a time-of-use tariff, and what changes when a
neighbour with the opposite surplus agrees to trade.
"""

# %%
# A small synthetic day: 96 quarter-hour slots, one producer and one consumer.
import numpy as np

from coalgrid import (construct_feasible_merge, generate_scenario, limited_info_upper_bound,
                      merge_gain, solve_decentralised)

sc = generate_scenario(seed=3, N=2)
producer, consumer = sc.buildings
print(producer.params)
print(consumer.params)

# %%
# Stand-alone dispatch.  Each building buys or sells its net load on the grid
# and may shift it with its battery.
plans, values = zip(*(solve_decentralised(b.params, b.series, sc.prices)
                      for b in sc.buildings))
for b, v in zip(sc.buildings, values):
    print(f"{b.name}: stand-alone cost {v:.4f}")

# The producer exports around midday while the consumer imports all day.
q_prod, q_cons = plans[0].grid_total, plans[1].grid_total
opposing = q_prod * q_cons < 0
print("slots with opposing trades:", int(opposing.sum()))

# %%
# Netting the opposing trades saves the buy/sell spread on the matched volume.
gain = merge_gain(q_prod, q_cons, sc.prices)
bound = limited_info_upper_bound(values[0], values[1], gain)
print(f"gain {gain:.4f}  ->  joint cost at most {bound:.4f}")

# The bound is attained by rerouting the matched volume between the two,
# keeping every battery schedule unchanged.
merged, cost = construct_feasible_merge([plans[0]], [plans[1]], sc.prices,
                                        [producer], [consumer])
print(f"constructed joint plan costs {cost:.4f}")
print("coalition trades sum to", float(np.abs(merged[0].coal_total + merged[1].coal_total).max()))
