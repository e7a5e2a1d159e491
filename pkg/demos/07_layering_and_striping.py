"""Ring sizes for layered deployments and packing symbols into rate-bounded stripes."""
from importlib import resources

from stockcast.layering import assign_stripes, layer_size
from stockcast.runner import run_scenario
from stockcast.scenario import load_scenario
from stockcast.verify import parse_trace, verify_records

for receivers, layers in [(10_000, 2), (100, 2), (10_000, 4)]:
    print(f"{receivers} receivers in {layers} layers -> rings of {layer_size(receivers, layers)}")

table = assign_stripes({"ACME": 60, "BOLT": 40, "CRUX": 30, "DYNE": 25, "EPIC": 20, "FLUX": 5}, 100)
for s in table.stripes:
    print(f"stripe {s.stripe_id}: {sorted(s.symbols)} at {s.aggregate_rate:g}")

sc = load_scenario(resources.files("stockcast") / "scenarios" / "layering_100.scn")
records = parse_trace(run_scenario(sc).trace_text)
iso = next(c for c in verify_records(records) if c.name == "repair_isolation")
print(f"\nsecondary receivers sent {iso.checked} repair requests; any reached the token holder: {not iso.ok}")
