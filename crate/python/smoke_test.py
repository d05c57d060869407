"""Quick end-to-end check of the Python bindings."""

import math

import pynormsample as ns


def main():
    inst = ns.Instance([[3.0, 4.0], [0.0, 0.0], [1.0, -1.0]], [1.0, 1.0, 2.0])
    assert len(inst) == 3 and inst.dim == 2
    assert abs(sum(inst.masses) - 1.0) < 1e-12

    q, w = ns.sampling_law(inst, score="sqnorm")
    assert all(0 < x <= 2 for x in w)
    for qi, wi, pi in zip(q, w, inst.masses):
        assert abs(qi * wi - pi) < 1e-12

    sample = ns.draw(inst, 500, seed=7)
    assert len(sample) == 500 and sample.convention == "mixture"
    again = ns.draw(inst, 500, seed=7)
    assert sample.indices == again.indices

    obj = ns.Objective("logistic", "l2sq", 10.0)
    f0, f = obj.value(inst, [0.0, 0.0])
    assert abs(f0 - math.log(2)) < 1e-12 and f == f0
    f0, f = obj.value(inst, [1.0, 0.0])
    assert abs(f - f0 - 0.1) < 1e-12
    err = obj.relative_error(inst, sample, [0.3, -0.2])
    assert err is not None and err < 0.2, err
    opt, x = obj.optimum(inst, restarts=2, seed=1)
    assert 0 < opt <= math.log(2) + 1e-9 and len(x) == 2

    assert ns.loss_value("relu", -2.0) == 2.0
    lo, hi = ns.wilson_interval(5, 10)
    assert abs(lo - 0.23659) < 1e-5 and abs(hi - 0.76341) < 1e-5

    hard = ns.generate_hard("lin-relu", k=8)
    assert len(hard.instance) == 16 and len(hard.queries()) == 16
    assert hard.convention == "proportional"
    rate, lo, hi = hard.failure_rate(m=20, eps=0.1, trials=50, seed=3)
    assert lo <= rate <= hi
    m_star = hard.min_sample_size(eps=0.1, delta=0.1, trials=60, seed=3)
    assert m_star > 20

    coupon = ns.generate_hard("coupon-relu", k=8, d=8)
    small = ns.draw(coupon.instance, 2, seed=0)
    failed, max_err = coupon.check_failure(small, 0.5)
    assert failed and abs(max_err - 0.6) < 1e-12

    try:
        ns.generate_hard("lin-relu", k=1)
    except ValueError as e:
        assert "k must be >= 2" in str(e)
    else:
        raise AssertionError("k = 1 accepted")

    print("smoke test passed: m* =", m_star)


if __name__ == "__main__":
    main()
