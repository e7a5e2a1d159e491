"""Simultaneous release and order-entry fairness.

A far receiver sits 150 ms from two nearby ones.  With the derived release
delay all three release each batch at the same instant; releasing on commit
lets the near receivers publish first.  A second experiment shows that
rotating the token across two cities makes order entry a coin flip.
"""
from stockcast.experiments import order_entry_fairness, release_fairness

rel = release_fairness(seeds=20)
print(f"derived delay: {rel.derived_batches} batches, {rel.derived_spread_batches} released unevenly "
      f"(only while a reformation was under way: {rel.derived_unexcused == 0})")
print(f"release on commit: worst spread {rel.zero_delay_max_spread_us / 1000:.1f} ms")

entry = order_entry_fairness(trials=300)
print(f"near trader sequenced first: rotating token {entry.rotating_near_first:.2f}, "
      f"fixed acknowledger in the near city {entry.fixed_near_first:.2f}")
