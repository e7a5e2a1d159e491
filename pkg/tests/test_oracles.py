"""Package results against independently derived, frozen reference values."""
import json
from fractions import Fraction

import pytest

from oracles import derive_values
from stockcast.core import stability_watermarks
from stockcast.layering import assign_stripes, layer_size
from stockcast.nack import nack_sets
from stockcast.timing import derive_params, token_deadline, token_period

FROZEN = json.loads(derive_values.FROZEN.read_text())


def test_frozen_file_matches_a_fresh_derivation():
    assert derive_values.derive() == FROZEN


@pytest.mark.parametrize("name,args", [("wan", (0.4, 3, 0.0, 0.02)), ("lan", (0.075, 3, 0.0, 0.0))])
def test_timing_matches_worst_case_walk(name, args):
    params = derive_params(*args)
    assert token_period(*args) == pytest.approx(float(Fraction(FROZEN[f"{name}_tau_t_s"])), abs=1e-12)
    assert params.tau_r == pytest.approx(float(Fraction(FROZEN[f"{name}_tau_r_s"])), abs=1e-12)
    assert params.delta_a == params.tau_t


def test_deadline_of_first_token():
    sched, late = token_deadline(1, 0.0, 0.525, 0.075)
    want = [float(Fraction(v)) for v in FROZEN["deadline_t1_s"]]
    assert (sched, late) == pytest.approx(want, abs=1e-12)


def test_nack_sets_match_ring_walk():
    assert nack_sets(0, 12, 3) == FROZEN["nack_0_12_3"]
    assert nack_sets(2, 5, 2) == FROZEN["nack_2_5_2"]


def test_stripe_counts_are_minimal():
    assert len(assign_stripes({"A": 30, "B": 30, "C": 30}, 56).stripes) == FROZEN["stripes_30x3_56"]
    mixed = {"A": 60, "B": 40, "C": 30, "D": 25, "E": 20, "F": 5}
    assert len(assign_stripes(mixed, 100).stripes) == FROZEN["stripes_mixed_100"]


def test_layer_sizes():
    assert layer_size(10_000, 2) == FROZEN["layer_10000_2"]
    assert layer_size(100, 2) == FROZEN["layer_100_2"]


def test_watermarks():
    assert list(stability_watermarks(100, 10)) == FROZEN["watermarks_100_10"]
