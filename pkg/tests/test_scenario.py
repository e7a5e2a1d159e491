from importlib import resources

import pytest

from stockcast.scenario import Scenario, ScenarioError, generate_topology, parse_scenario

BASE = """stockcast-scenario 1
[run]
seed = 3
horizon = 2.0

[timing]
delta_n = 0.012
k_r = 2

[generate]
primaries = 4
sources = 2

[workload]
messages = 20
"""


def corpus():
    root = resources.files("stockcast") / "scenarios"
    return sorted((p.name, p.read_text()) for p in root.iterdir() if p.name.endswith(".scn"))


def test_minimal_file_parses():
    sc = parse_scenario(BASE)
    assert sc.primaries == ["P0", "P1", "P2", "P3"] and sc.sources == ["A0", "A1"]
    assert sc.timing().tau_t == pytest.approx(0.012 + 2 * (0.024 + 0.001))
    dn, tau_r, tau_t, delta_a, eps = sc.timing_us()
    assert tau_t == dn + 2 * tau_r == delta_a and eps == 0


def test_workload_is_seeded():
    a, b = parse_scenario(BASE), parse_scenario(BASE)
    assert a.workload() == b.workload()
    b.seed, b.pattern = 4, "poisson"
    a.pattern = "poisson"
    assert a.workload() != b.workload()


@pytest.mark.parametrize("name,text", corpus())
def test_corpus_parses(name, text):
    parse_scenario(text).validate()


def test_missing_header():
    with pytest.raises(ScenarioError, match="line 1: format"):
        parse_scenario(BASE.replace("stockcast-scenario 1\n", ""))


def test_k_p_above_m_names_the_field_and_line():
    text = BASE + "\n[nack]\nnack_enabled = true\nnack_k_p = 9\n"
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text)
    assert err.value.field == "nack_k_p"
    assert err.value.line == text.splitlines().index("nack_k_p = 9") + 1


@pytest.mark.parametrize("extra,field", [
    ("[run]\nfoo = 1\n", "run"),
    ("[bogus]\nx = 1\n", "bogus"),
    ("[faults]\ncrash = P9@1.0\n", "faults"),
    ("[app]\nprice_rule = Coinflip\n", "price_rule"),
    ("[unicast]\nloss = 2\n", "unicast_loss"),
])
def test_bad_values_are_reported(extra, field):
    text = BASE.replace("[run]\n", "[run]\n" + extra.split("\n", 1)[1]) if extra.startswith("[run]") else BASE + extra
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text)
    assert field in str(err.value)


def test_delta_n_must_cover_longest_path():
    with pytest.raises(ScenarioError, match="longest path"):
        parse_scenario(BASE.replace("delta_n = 0.012", "delta_n = 0.001"))


def test_malformed_number_names_line():
    with pytest.raises(ScenarioError, match="line 8: k_r"):
        parse_scenario(BASE.replace("k_r = 2", "k_r = two"))


def test_generated_tree_records_its_arguments():
    sc = generate_topology(Scenario(), 20, 3, fanout=3)
    assert sc.generate_spec["primaries"] == 20
    assert len(sc.primaries) == 20 and sc.tree["core"][0] is None
