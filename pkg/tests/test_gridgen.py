"""
격자 생성 테스트
"""

import numpy as np
import pytest
from scipy.special import ndtr
from scipy.stats import kstest

from app.core.errors import ConfigurationError, DomainError
from app.schemas.grid import SobolConfig
from app.schemas.market import MarketParams
from app.services.gridgen import (
    build_grid,
    export_grid_csv,
    grid_to_unit,
    inverse_normal_cdf,
    load_grid_csv,
    sobol_sequence,
    split,
)


class TestSobolSequence:
    """Sobol 수열 테스트"""

    def test_first_points_one_dimension(self):
        """1차원, 스크램블 없음, 원점 건너뜀"""
        points = sobol_sequence(SobolConfig(dimension=1, skip=1), 4)
        assert points[:, 0].tolist() == [0.5, 0.75, 0.25, 0.375]

    def test_column_means(self):
        """2^14 점의 열 평균은 0.5 근처"""
        points = sobol_sequence(SobolConfig(dimension=3), 2**14)
        assert np.all(np.abs(points.mean(axis=0) - 0.5) <= 0.01)

    def test_deterministic(self):
        """같은 설정 → 같은 수열"""
        cfg = SobolConfig(dimension=2, scramble_seed=7)
        assert np.array_equal(sobol_sequence(cfg, 64), sobol_sequence(cfg, 64))

    def test_lower_discrepancy_than_pseudo_random(self):
        """축별 KS 통계량이 의사 난수보다 작음"""
        n = 1024
        quasi = sobol_sequence(SobolConfig(dimension=3), n)
        pseudo = np.random.default_rng(0).random((n, 3))
        for j in range(3):
            assert kstest(quasi[:, j], "uniform").statistic < kstest(pseudo[:, j], "uniform").statistic

    def test_unsupported_dimension(self):
        """방향수 테이블을 넘는 차원은 설정 오류"""
        with pytest.raises(ConfigurationError):
            sobol_sequence(SobolConfig(dimension=30000), 4)


class TestInverseNormalCdf:
    """표준 정규 분위수 테스트"""

    def test_known_values(self):
        """Φ⁻¹(0.5) = 0, Φ⁻¹(0.975) ≈ 1.959964"""
        assert inverse_normal_cdf(0.5) == 0.0
        assert inverse_normal_cdf(0.975) == pytest.approx(1.959964, abs=1e-6)

    def test_symmetry(self):
        """Φ⁻¹(1-u) = -Φ⁻¹(u)"""
        u = np.linspace(0.01, 0.49, 25)
        assert inverse_normal_cdf(1.0 - u) == pytest.approx(-inverse_normal_cdf(u), abs=1e-12)

    def test_inverse_of_cdf(self):
        """|Φ(Φ⁻¹(u)) - u| <= 1e-9"""
        u = np.linspace(1e-6, 1 - 1e-6, 1001)
        assert np.max(np.abs(ndtr(inverse_normal_cdf(u)) - u)) <= 1e-9

    def test_out_of_range(self):
        """(0, 1) 밖은 도메인 오류"""
        for u in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(DomainError):
                inverse_normal_cdf(u)


class TestBuildGrid:
    """가우시안 변환 격자 테스트"""

    @pytest.fixture
    def diag_market(self) -> MarketParams:
        return MarketParams(r=0.05, sigma=[[0.04, 0.0], [0.0, 0.09]], spot=[100.0, 100.0])

    def test_covariance_matches(self, diag_market):
        """spread=1 이면 표본 공분산 ≈ sigma·horizon"""
        grid = build_grid(diag_market, 1.0, 1.0, 4096, SobolConfig(dimension=2))
        cov = np.cov(grid.points.T)
        assert np.diag(cov) == pytest.approx(np.diag(diag_market.cov), rel=0.1)
        assert abs(cov[0, 1]) <= 0.1 * np.sqrt(cov[0, 0] * cov[1, 1])

    def test_center(self, diag_market):
        """중심은 log(spot) + (r - σ²/2)·horizon"""
        grid = build_grid(diag_market, 2.0, 1.0, 64, SobolConfig(dimension=2))
        expected = np.log(100.0) + (0.05 - 0.5 * np.array([0.04, 0.09])) * 2.0
        assert grid.center == pytest.approx(expected, rel=1e-14)

    def test_spread_scales_deviation(self, diag_market):
        """spread 를 두 배로 하면 중심 편차가 두 배"""
        cfg = SobolConfig(dimension=2)
        g1 = build_grid(diag_market, 1.0, 1.0, 128, cfg)
        g2 = build_grid(diag_market, 1.0, 2.0, 128, cfg)
        assert g2.points - g2.center == pytest.approx(2.0 * (g1.points - g1.center), rel=1e-12, abs=1e-14)

    def test_minimum_size(self, diag_market):
        """n = d+2 는 허용, 더 작으면 도메인 오류"""
        grid = build_grid(diag_market, 1.0, 1.5, 4, SobolConfig(dimension=2))
        assert grid.n_g == 4
        with pytest.raises(DomainError):
            build_grid(diag_market, 1.0, 1.5, 3, SobolConfig(dimension=2))

    def test_back_to_unit_cube(self, diag_market):
        """역변환하면 원래 Sobol 점"""
        cfg = SobolConfig(dimension=2)
        grid = build_grid(diag_market, 1.0, 1.5, 256, cfg)
        assert grid_to_unit(grid) == pytest.approx(sobol_sequence(cfg, 256), abs=1e-6)

    def test_all_points_train_before_split(self, diag_market):
        """분할 전에는 모두 학습점"""
        grid = build_grid(diag_market, 1.0, 1.5, 32, SobolConfig(dimension=2))
        assert grid.train_idx.tolist() == list(range(32))
        assert grid.val_idx.size == 0


class TestSplit:
    """학습/검증 분할 테스트"""

    @pytest.fixture
    def grid(self, market_2d):
        return build_grid(market_2d, 1.0, 1.5, 100, SobolConfig(dimension=2))

    def test_sizes(self, grid):
        """n=100, 비율 0.2 → 검증 20, 학습 80"""
        parted = split(grid, 0.2, seed=1)
        assert parted.val_idx.size == 20
        assert parted.train_idx.size == 80
        assert np.intersect1d(parted.train_idx, parted.val_idx).size == 0

    def test_deterministic(self, grid):
        """같은 시드 → 같은 분할"""
        a, b = split(grid, 0.2, seed=4), split(grid, 0.2, seed=4)
        assert np.array_equal(a.val_idx, b.val_idx)

    def test_seed_changes_split(self, grid):
        """다른 시드 → 다른 분할"""
        assert not np.array_equal(split(grid, 0.2, seed=1).val_idx, split(grid, 0.2, seed=2).val_idx)

    def test_three_points(self):
        """n=3, 비율 0.5 → 크기 {1, 2}"""
        params = MarketParams(r=0.0, sigma=[[0.04]], spot=[100.0])
        parted = split(build_grid(params, 1.0, 1.0, 3, SobolConfig(dimension=1)), 0.5, seed=0)
        assert sorted([parted.train_idx.size, parted.val_idx.size]) == [1, 2]

    def test_invalid_fraction(self, grid):
        """비율은 (0, 1)"""
        with pytest.raises(DomainError):
            split(grid, 1.0, seed=0)


class TestGridCsv:
    """격자 CSV 저장/불러오기 테스트"""

    def test_round_trip(self, market_2d, tmp_path):
        """점, 검증 인덱스, 변환 정보 보존"""
        grid = split(build_grid(market_2d, 1.0, 1.5, 50, SobolConfig(dimension=2)), 0.2, seed=3)
        path = export_grid_csv(grid, tmp_path / "grid.csv")
        loaded = load_grid_csv(path)
        assert np.array_equal(loaded.points, grid.points)
        assert np.array_equal(loaded.val_idx, grid.val_idx)
        assert np.array_equal(loaded.train_idx, grid.train_idx)
        assert np.array_equal(loaded.center, grid.center)
        assert loaded.spread == 1.5

    def test_header(self, market_2d, tmp_path):
        """첫 줄은 메타데이터 주석, 둘째 줄은 열 이름"""
        grid = build_grid(market_2d, 1.0, 1.5, 8, SobolConfig(dimension=2))
        lines = export_grid_csv(grid, tmp_path / "grid.csv").read_text().splitlines()
        assert lines[0].startswith("# {")
        assert lines[1] == "x0,x1"
        assert len(lines) == 10
