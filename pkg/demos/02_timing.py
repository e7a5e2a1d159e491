"""Token period and delivery delay for a wide-area and a local deployment."""
from stockcast.timing import derive_params, token_deadline

for label, args in [("wide area", (0.400, 3, 0.0, 0.020)), ("one site", (0.075, 3, 0.0, 0.0))]:
    p = derive_params(*args)
    print(f"{label:9}  delta_n={p.delta_n * 1000:.0f}ms k_r={p.k_r}  ->  tau_r={p.tau_r * 1000:.0f}ms "
          f"tau_t=delta_a={p.tau_t:.3f}s")

sched, late = token_deadline(1, 0.0, 0.525, 0.075)
print(f"\ntoken 1 of a ring started at 0: due {sched * 1000:.0f}ms, late after {late * 1000:.0f}ms")
