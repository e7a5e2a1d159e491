"""Staggering retransmission requests when one router drops for six receivers."""
from stockcast.experiments import nack_comparison
from stockcast.nack import nack_sets

print("request waves for the token sent from position 0 of a 12-ring, k_p=3:")
for i, wave in enumerate(nack_sets(0, 12, 3)):
    print(f"  wave {i}: positions {wave}")

cmp = nack_comparison(seeds=10)
print("\nseed  requests(k_p=3)  requests(k_p=1)")
for seed, staggered, flat in cmp.counts:
    print(f"{seed:4}  {staggered:15}  {flat:15}")
print(f"never worse: {cmp.never_worse}; strictly fewer in {cmp.strictly_lower_fraction:.0%} of seeds")
