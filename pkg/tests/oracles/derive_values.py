"""Independent derivations of the reference numbers the unit tests pin.

Nothing here imports the package.  Timing values come from walking the
worst-case recovery timeline in exact rational arithmetic, NACK sets from
walking the ring position by position, stripe counts from brute-force set
partitions.  Run as a script to print the values; ``frozen.json`` holds the
output that the tests compare against.
"""
from __future__ import annotations

import itertools
import json
from fractions import Fraction
from pathlib import Path

FROZEN = Path(__file__).with_name("frozen.json")


def ms(v) -> Fraction:
    return Fraction(v) / 1000


def worst_case_timeline(delta_n: Fraction, k_r: int, x: Fraction, p: Fraction) -> dict:
    """Latest instant a receiver can still be recovering a message acknowledged at 0.

    The ack reaches it after delta_n; each of k_r request rounds costs a
    request leg, the responder's processing and transmit time and the reply leg.
    """
    clock = delta_n
    rounds = []
    for _ in range(k_r):
        start = clock
        clock += delta_n  # request travels
        clock += x + p   # responder handles it
        clock += delta_n  # reply travels
        rounds.append(clock - start)
    return {"done_by": clock, "round": rounds[0] if rounds else None}


def nack_sets_by_walk(r: int, m: int, k_p: int) -> list[list[int]]:
    """Walk the ring from r's successor, dealing positions into k_p waves in turn."""
    waves: list[list[int]] = [[] for _ in range(k_p)]
    for step in range(m):
        waves[step % k_p].append((r + 1 + step) % m)
    return waves


def min_stripes(rates: dict[str, int], budget: int) -> int:
    """Fewest bins over every set partition of the symbols (tiny inputs only)."""
    names = sorted(rates)
    best = len(names)
    for labels in itertools.product(range(len(names)), repeat=len(names)):
        bins: dict[int, int] = {}
        for name, b in zip(names, labels):
            bins[b] = bins.get(b, 0) + rates[name]
        if all(v <= budget for v in bins.values()):
            best = min(best, len(bins))
    return best


def integer_root(n: int, i: int) -> int:
    """Nearest integer to n**(1/i), found by search rather than floating point."""
    lo = 0
    while (lo + 1) ** i <= n:
        lo += 1
    # pick whichever neighbour's power is nearer, comparing in exact rationals
    lo_err = abs(Fraction(n) - lo ** i)
    hi_err = abs(Fraction((lo + 1) ** i) - n)
    return lo if lo_err <= hi_err else lo + 1


def derive() -> dict:
    out: dict = {}
    for name, (dn, k, x, p) in {"wan": (ms(400), 3, ms(0), ms(20)), "lan": (ms(75), 3, ms(0), ms(0))}.items():
        tl = worst_case_timeline(dn, k, x, p)
        out[f"{name}_tau_t_s"] = str(tl["done_by"])
        out[f"{name}_tau_r_s"] = str(tl["round"])
    # token 1 of a ring started at 0 with tau_t 525 ms, network bound 75 ms
    out["deadline_t1_s"] = [str(ms(525)), str(ms(525) + ms(75))]
    out["nack_0_12_3"] = nack_sets_by_walk(0, 12, 3)
    out["nack_2_5_2"] = nack_sets_by_walk(2, 5, 2)
    out["stripes_30x3_56"] = min_stripes({"A": 30, "B": 30, "C": 30}, 56)
    out["stripes_mixed_100"] = min_stripes({"A": 60, "B": 40, "C": 30, "D": 25, "E": 20, "F": 5}, 100)
    out["layer_10000_2"] = integer_root(10000, 2)
    out["layer_100_2"] = integer_root(100, 2)
    out["watermarks_100_10"] = [100 - 10 + 1, 100 - 10 + 2]
    return out


if __name__ == "__main__":
    values = derive()
    print(json.dumps(values, indent=2))
    if not FROZEN.exists():
        FROZEN.write_text(json.dumps(values, indent=2, sort_keys=True) + "\n")
