import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feddct.costs import (CommParams, CostLedger, comm_cost_main, comm_cost_proxy, comm_cost_total, cost_table,
                          count_flops, count_params, fedavg_comm_cost, memory_estimate)
from feddct.division import LayerSpec, ModelSpec, divide_model
from feddct.nn import RngStream


def test_param_examples():
    assert count_params(LayerSpec(3, 4, 8)) == 288
    assert count_params(LayerSpec(3, 8, 8, groups=8)) == 72


def test_flop_examples():
    assert count_flops(LayerSpec(1, 1, 1)) == 1
    assert count_flops(LayerSpec(3, 4, 8, out_h=4, out_w=4)) == (72 - 1) * 16 * 8 == 9088
    assert count_flops(LayerSpec(3, 4, 8, out_h=8, out_w=4)) == 2 * 9088


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 7), st.integers(1, 256), st.integers(1, 256))
def test_param_count_symmetric_in_channels(M, a, b):
    assert count_params(LayerSpec(M, a, b)) == count_params(LayerSpec(M, b, a))


def test_memory_examples():
    assert memory_estimate(ModelSpec([]), 4) == CostLedger()
    led = memory_estimate([LayerSpec(1, 10, 10, kind="dense")], 1)
    assert led.mem_model == 800 and led.mem_optimizer == 800 and led.mem_activation == 80


def test_memory_of_divided_model_scales_with_S():
    spec = ModelSpec([LayerSpec(3, 32, 64, out_h=8, out_w=8), LayerSpec(3, 64, 64, out_h=4, out_w=4)])
    full = memory_estimate(spec, 8)
    quarter = memory_estimate(divide_model(spec, 4).divided, 8)
    assert quarter.mem_model * 4 == full.mem_model
    assert quarter.mem_activation * 2 == full.mem_activation  # channels halve, maps stay


def test_memory_rejects_bad_batch():
    with pytest.raises(ValueError):
        memory_estimate(ModelSpec([]), 0)


def test_ledger_addition_componentwise():
    a, b = CostLedger(params=1, bytes_up=10), CostLedger(params=2, bytes_down=5)
    assert (a + b).as_dict() == {**CostLedger().as_dict(), "params": 3, "bytes_up": 10, "bytes_down": 5}
    with pytest.raises(ValueError):
        CostLedger(flops=-1)


def test_comm_numeric_case_by_substitution():
    c = CommParams(S=2, K=2, p=1000, Q=100, beta=0.2, w_size=10000)
    # (S-1)(2p/K)(Q/S) = 1 * 1000 * 50 ; 2*beta*w = 4000 ; 2(1-beta)w/S = 8000
    assert comm_cost_main(c) == 50000 + 4000 + 8000
    assert comm_cost_proxy(c) == 50000 + 8000
    assert comm_cost_total(c) == 1 * 2000 * 50 + 20000


def test_comm_limits():
    w = 1234.0
    assert comm_cost_main(CommParams(S=2, K=2, p=10, Q=0, beta=0.5, w_size=w)) == pytest.approx(1.5 * w)
    assert comm_cost_proxy(CommParams(S=4, K=8, p=10, Q=0, beta=0.25, w_size=w)) == pytest.approx(2 * 0.75 * w / 4)
    assert comm_cost_total(CommParams(S=4, K=8, p=10, Q=0, beta=0.25, w_size=w)) == 2 * w
    near_one = CommParams(S=4, K=8, p=800, Q=40, beta=1 - 1e-12, w_size=w)
    assert comm_cost_proxy(near_one) == pytest.approx(2 * 100 * 10, rel=1e-9)
    assert fedavg_comm_cost(w) == 2 * w


def test_comm_preconditions():
    with pytest.raises(ValueError):
        CommParams(S=1, K=4, p=1, Q=1, beta=0.5, w_size=1)
    with pytest.raises(ValueError):
        CommParams(S=4, K=6, p=1, Q=1, beta=0.5, w_size=1)


def random_comm_params(n, seed=0):
    r = RngStream(seed, "comm")
    S = r.child("S").integers(2, 33, size=n)
    mult = r.child("K").integers(1, 10, size=n)
    p = r.child("p").uniform(1, 1e6, size=n)
    Q = r.child("Q").uniform(0, 1e5, size=n)
    beta = r.child("b").uniform(0.01, 0.99, size=n)
    w = r.child("w").uniform(1e3, 1e9, size=n)
    return [CommParams(int(S[i]), int(S[i] * mult[i]), p[i], Q[i], beta[i], w[i]) for i in range(n)]


def test_main_plus_proxies_equals_total():
    worst = 0.0
    for c in random_comm_params(1000):
        lhs = comm_cost_main(c) + (c.S - 1) * comm_cost_proxy(c)
        worst = max(worst, abs(lhs - comm_cost_total(c)) / comm_cost_total(c))
    assert worst < 1e-9


def test_cost_table_rows():
    rows = cost_table([LayerSpec(3, 4, 8, out_h=4, out_w=4, name="c")])
    assert rows[0]["params"] == 288 and rows[0]["flops"] == 9088
    assert np.isclose(sum(r["params"] for r in rows), 288)
