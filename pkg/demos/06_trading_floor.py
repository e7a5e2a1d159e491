"""Distributed trading floor: tentative trades become confirmed a ring cycle
later, and survive the loss of any one primary."""
from stockcast.experiments import floor_crash

for victim in range(4):
    out = floor_crash(seed=victim + 1, victim_index=victim)
    print(f"killed {out.victim}: {out.confirmed} confirmed trades, every one replays from each "
          f"survivor's log: {out.durable}")
