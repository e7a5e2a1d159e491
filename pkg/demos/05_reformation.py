"""Kill whichever receiver holds the token and watch the ring rebuild itself."""
from stockcast.experiments import crash_scenario
from stockcast.runner import run_scenario
from stockcast.verify import all_passed, parse_trace, verify_records

sc = crash_scenario(seed=4)
sc.crash_token_site = [1.7]
records = parse_trace(run_scenario(sc).trace_text)
for r in records:
    if r.kind in ("crash", "report", "reform_start", "reform_done"):
        print(r.describe())
crash = next(r for r in records if r.kind == "crash")
after = sum(r.kind == "release" and r.int("ts") > crash.at for r in records)
print(f"\n{after} releases of batches acknowledged after the crash; invariants hold: "
      f"{all_passed(verify_records(records))}")
