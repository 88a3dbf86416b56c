import pytest

from chainforge import chipcost
from chainforge import market as mk
from chainforge.uncertainty import Exhaustive, sample


def one_good(b=100.0, u_ben=2.0, u_cost=1.0, nre=10.0, u_sc=0.0, y=1.0, h=0.0):
    return mk.MarketSpec(
        produced=(mk.ProducedGood("g", u_cost, nre, y),),
        demanded=(mk.DemandedGood("d", b, u_ben, u_sc, h),),
        mappings=(mk.Mapping.make("id", {"g": 1}, "d"),),
    )


def exhaustive(spec, seed=0):
    return sample(spec.uncertainty, Exhaustive(), seed, spec.suppliers, spec.demanded_ids)


@pytest.fixture(scope="session")
def params():
    return chipcost.CostParams()


@pytest.fixture(scope="session")
def baseline(params):
    return mk.build_baseline([16, 8, 4], params)
