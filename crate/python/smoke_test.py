"""Smoke test for the pydpp extension module.

Build and install it first, e.g.

    pip install --no-build-isolation -e crates/py
"""

import math

import pydpp


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    k = pydpp.Kernel.constant_rank1()
    halves = pydpp.Partition.uniform(k, 2)
    q = pydpp.transfer(k, halves)
    assert all(close(x, 0.5, 1e-15) for row in q.q for x in row), q.q
    assert q.blocks == [(0, 1), (1, 1)]

    fourier = pydpp.Kernel.fourier_projection(3)
    thirds = pydpp.Partition.uniform(fourier, 3)
    report = pydpp.verify(fourier, thirds)
    assert report["pass"] and report["tv"] < 1e-8, report

    law_k = pydpp.joint_law(fourier, thirds)
    law_q = pydpp.transfer(fourier, thirds).joint_law()
    assert pydpp.tv_distance(law_k, law_q) < 1e-8
    assert close(sum(law_k.atoms().values()), 1.0, 1e-9)
    assert close(law_k.total().prob([3]), 1.0, 1e-9)

    # no Legendre degree reaches this tolerance
    try:
        pydpp.transfer(fourier, pydpp.Partition.uniform(fourier, 2), tol=1e-300)
    except pydpp.LeakageError:
        pass
    else:
        raise AssertionError("expected LeakageError")

    sine = pydpp.Kernel.discretized_sine(6)
    m = sine.matrix()
    table = pydpp.l_ensemble(m)
    assert close(sum(table.values()), 1.0, 1e-9)
    marginal0 = sum(p for sites, p in table.items() if 0 in sites)
    assert close(marginal0, m[0][0], 1e-9)

    draws = pydpp.sample(m, 20000, seed=7)
    assert draws == pydpp.sample(m, 20000, seed=7)
    freq0 = sum(1 for d in draws if 0 in d) / len(draws)
    se = math.sqrt(m[0][0] * (1 - m[0][0]) / len(draws))
    assert abs(freq0 - m[0][0]) < 4 * se

    proj = [[0.5, 0.5], [0.5, 0.5]]
    assert all(len(d) == 1 for d in pydpp.sample(proj, 1000, seed=1))

    again = pydpp.Kernel.from_json(fourier.to_json())
    assert again.eigenvalues == fourier.eigenvalues
    print(f"pydpp {pydpp.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
