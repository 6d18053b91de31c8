"""
공용 테스트 픽스처

가격 계산 픽스처는 작은 격자와 적은 항 수로 만들어 모듈 단위로 재사용합니다.
"""

import numpy as np
import pytest

from app.schemas.grid import SobolConfig
from app.schemas.market import ExerciseStyle, MarketParams, PayoffKind, PayoffSpec, TimeGrid
from app.schemas.mixture import FitConfig
from app.schemas.pricing import PricerConfig
from app.services.gridgen import build_grid, split
from app.services.lattice import backward_induct

SMALL_FIT = FitConfig(max_terms=30, n_center_candidates=8, n_precision_scales=3, refine_iters=4, patience=3)


def small_pricer(**overrides) -> PricerConfig:
    values = {"n_descendants": 64, "fit": SMALL_FIT, "seed": 11}
    values.update(overrides)
    return PricerConfig(**values)


def small_grid(params: MarketParams, horizon: float, n: int = 256, seed: int = 3):
    grid = build_grid(params, horizon, 1.5, n, SobolConfig(dimension=params.d))
    return split(grid, 0.2, seed)


@pytest.fixture(scope="session")
def market_2d() -> MarketParams:
    """두 자산, 변동성 0.2/0.3, 상관 0.5"""
    return MarketParams.from_vols(0.05, [0.2, 0.3], [100.0, 100.0], [[1.0, 0.5], [0.5, 1.0]])


@pytest.fixture(scope="session")
def american_min_put() -> PayoffSpec:
    return PayoffSpec(kind=PayoffKind.MIN_PUT, strike=100.0, style=ExerciseStyle.AMERICAN)


@pytest.fixture(scope="session")
def european_min_put() -> PayoffSpec:
    return PayoffSpec(kind=PayoffKind.MIN_PUT, strike=100.0, style=ExerciseStyle.EUROPEAN)


@pytest.fixture(scope="session")
def two_steps() -> TimeGrid:
    return TimeGrid(maturity=1.0, steps=2)


@pytest.fixture(scope="session")
def american_result(market_2d, american_min_put, two_steps):
    """2자산 American 최소값 풋, 2단계, 작은 격자"""
    grid = small_grid(market_2d, two_steps.maturity)
    return backward_induct(market_2d, american_min_put, two_steps, grid, small_pricer())


@pytest.fixture(scope="session")
def european_result(market_2d, european_min_put, two_steps):
    grid = small_grid(market_2d, two_steps.maturity)
    return backward_induct(market_2d, european_min_put, two_steps, grid, small_pricer())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
