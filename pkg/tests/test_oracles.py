from chainforge import closed_form as cf
from chainforge import oracles


def test_run_all_ok():
    results = oracles.run_all()
    bad = [(r.name, r.detail) for r in results if not r.ok]
    assert not bad
    table = oracles.format_table(results)
    assert all(r.name in table for r in results)


def test_break_even_equal_costs_skipped():
    r = oracles.check_break_even(c1=2.0, c2=2.0)
    assert r.status == "skip" and r.ok


def test_break_even_detects_flip():
    r = oracles.check_break_even(n1=100, n2=40, c1=1, c2=2, step=1.0, points=41)
    assert r.status == "pass"


def test_engine_substitution_matches():
    for zd in (30.0, 90.0):
        s = cf.SubstitutionScenario(r=10, t=0.5, c1=1, c2=2, n1=100, n2=40, zd=zd)
        assert oracles.engine_prefers_substitute(s) == cf.prefer_substitute(s)


def test_engine_goop_costs_match_enumeration():
    want = cf.goop_costs(3, 2.0, 0.5)
    got = oracles.engine_goop_costs(3, 2.0, 0.5)
    for key, v in want.items():
        assert abs(got[key] - v) < 1e-6


def test_monte_carlo_check():
    assert oracles.check_monte_carlo(ks=(4,), n=20_000).ok
