"""
가우시안 혼합 적합 테스트

평가, L2 노름, 후보 제안, 재결합, 탐욕 적합, 수렴률 점검, 직렬화를 테스트합니다.
"""

import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from app.core.errors import DomainError, FitFailure
from app.schemas.grid import SobolConfig
from app.schemas.mixture import FitConfig, GaussianMixture, RgaMode
from app.services.approx import (
    backfit_weights,
    base_precision,
    dump_mixture,
    evaluate,
    fit_rga,
    l2_norm,
    load_mixture,
    mixture_difference,
    precision_ladder,
    propose_candidates,
    rate_bound,
    recombine,
    theorem_rate_check,
)
from app.services.gridgen import build_grid, split
from app.services.jobs import synthetic_target

FAST_FIT = FitConfig(max_terms=12, n_center_candidates=8, n_precision_scales=3, refine_iters=3)


def _single(d: int, weight: float, precision: np.ndarray, center: np.ndarray) -> GaussianMixture:
    return GaussianMixture(d=d, weights=np.array([weight]), centers=center[None, :], precisions=precision[None, :, :])


def _random_spd(rng: np.random.Generator, d: int) -> np.ndarray:
    raw = rng.standard_normal((d, d))
    return raw @ raw.T / d + 0.5 * np.eye(d)


class TestEvaluate:
    """혼합 평가 테스트"""

    def test_empty_mixture_is_zero(self):
        """항이 없으면 어디서나 0"""
        mixture = GaussianMixture.empty(3)
        assert evaluate(mixture, np.array([0.1, -2.0, 5.0])) == 0.0
        assert np.all(evaluate(mixture, np.ones((4, 3))) == 0.0)

    def test_single_term_at_center(self):
        """d=1, B=2, 중심에서 2^{1/4}π^{-1/4} ≈ 0.893244"""
        mixture = _single(1, 1.0, np.array([[2.0]]), np.array([0.0]))
        assert evaluate(mixture, np.array([0.0])) == pytest.approx(0.893244, abs=1e-6)

    def test_far_from_center(self):
        """중심에서 멀면 사실상 0"""
        mixture = _single(1, 1.0, np.array([[1.0]]), np.array([0.0]))
        assert evaluate(mixture, np.array([30.0])) < 1e-40

    def test_linear_in_weights(self, rng):
        """값은 계수에 선형"""
        precision = _random_spd(rng, 2)
        center = rng.standard_normal(2)
        x = rng.standard_normal((10, 2))
        one = evaluate(_single(2, 1.0, precision, center), x)
        three = evaluate(_single(2, 3.0, precision, center), x)
        assert three == pytest.approx(3.0 * one, rel=1e-14)

    def test_dimension_mismatch(self):
        """점 차원이 다르면 도메인 오류"""
        mixture = _single(2, 1.0, np.eye(2), np.zeros(2))
        with pytest.raises(DomainError):
            evaluate(mixture, np.zeros(3))


class TestL2Norm:
    """L2 노름 테스트"""

    def test_single_term(self):
        """정규화 항 하나의 노름은 |a|"""
        mixture = _single(2, -2.5, np.array([[3.0, 0.5], [0.5, 1.0]]), np.array([0.3, -0.1]))
        assert l2_norm(mixture) == pytest.approx(2.5, rel=1e-12)

    def test_identical_terms(self):
        """같은 항 두 개 → 2"""
        precision, center = np.eye(2), np.zeros(2)
        mixture = GaussianMixture(
            d=2, weights=np.ones(2), centers=np.stack([center, center]), precisions=np.stack([precision, precision])
        )
        assert l2_norm(mixture) == pytest.approx(2.0, rel=1e-12)

    def test_separated_terms(self):
        """멀리 떨어진 두 항 → √2"""
        mixture = GaussianMixture(
            d=1, weights=np.ones(2), centers=np.array([[0.0], [50.0]]), precisions=np.ones((2, 1, 1))
        )
        assert l2_norm(mixture) == pytest.approx(np.sqrt(2.0), abs=1e-6)

    def test_normalisation_by_quadrature_1d(self, rng):
        """수치 적분으로 ∫φ² = 1 확인 (1차원)"""
        for _ in range(20):
            b = float(rng.uniform(0.05, 20.0))
            c = float(rng.normal())
            mixture = _single(1, 1.0, np.array([[b]]), np.array([c]))
            width = 12.0 / np.sqrt(b)
            value, _ = quad(lambda x: evaluate(mixture, np.array([x])) ** 2, c - width, c + width, limit=200)
            assert value == pytest.approx(1.0, abs=1e-4)

    def test_normalisation_by_quadrature_2d(self, rng):
        """수치 적분으로 ∫φ² = 1 확인 (2차원)"""
        for _ in range(2):
            precision = _random_spd(rng, 2)
            mixture = _single(2, 1.0, precision, np.zeros(2))
            box = 10.0 * np.sqrt(np.max(np.diag(np.linalg.inv(precision))))
            value, _ = dblquad(
                lambda y, x: evaluate(mixture, np.array([x, y])) ** 2,
                -box,
                box,
                -box,
                box,
                epsabs=1e-8,
            )
            assert value == pytest.approx(1.0, abs=1e-4)

    def test_difference_with_itself(self, rng):
        """자기 자신과의 차이는 0"""
        mixture = synthetic_target(2, 4, 3.0, rng)
        assert l2_norm(mixture_difference(mixture, mixture)) == pytest.approx(0.0, abs=1e-6)


class TestCandidates:
    """후보 제안 테스트"""

    def test_precision_ladder(self):
        """n=3, 비율 4 → {B/4, B, 4B}"""
        base = np.eye(2) * 2.0
        ladder = precision_ladder(base, 3, 4.0)
        assert [float(p[0, 0]) for p in ladder] == [0.5, 2.0, 8.0]

    def test_concentrated_residual(self, rng):
        """잔차가 한 점에만 있으면 모든 중심이 그 점"""
        xs = rng.standard_normal((50, 2))
        residual = np.zeros(50)
        residual[17] = 3.0
        cfg = FitConfig(n_center_candidates=5, n_precision_scales=3)
        candidates = propose_candidates(residual, xs, cfg)
        assert len(candidates) == 15
        for _, center in candidates:
            assert np.array_equal(center, xs[17])

    def test_zero_residual(self, rng):
        """잔차가 0 이면 후보 없음"""
        xs = rng.standard_normal((20, 2))
        assert propose_candidates(np.zeros(20), xs, FitConfig()) == []

    def test_first_center_is_residual_peak(self, rng):
        """첫 후보 중심은 |잔차| 최대 지점"""
        xs = rng.standard_normal((40, 3))
        residual = rng.standard_normal(40)
        candidates = propose_candidates(residual, xs, FitConfig(n_center_candidates=4, n_precision_scales=2))
        assert np.array_equal(candidates[0][1], xs[int(np.argmax(np.abs(residual)))])

    def test_candidates_are_spd(self, rng):
        """모든 후보 정밀도는 대칭 양정치"""
        xs = rng.standard_normal((40, 3))
        for precision, _ in propose_candidates(rng.standard_normal(40), xs, FitConfig()):
            assert np.allclose(precision, precision.T)
            assert np.all(np.linalg.eigvalsh(precision) > 0)


class TestRecombine:
    """재결합 계수 테스트"""

    def test_convex_exact_current(self, rng):
        """f_n 이 이미 목표면 λ* = 0"""
        y = rng.standard_normal(30)
        a, b = recombine(y, rng.standard_normal(30), y, RgaMode.CONVEX)
        assert (a, b) == (1.0, 0.0)

    def test_affine_from_zero(self, rng):
        """f_n = 0, φ ∝ y → 정확히 y"""
        y = rng.standard_normal(30)
        phi = 0.25 * y
        a, b = recombine(np.zeros(30), phi, y, RgaMode.AFFINE)
        assert b * phi == pytest.approx(y, rel=1e-12)

    def test_affine_not_worse_than_convex(self, rng):
        """affine MSE <= convex MSE"""
        for _ in range(20):
            f, phi, y = rng.standard_normal((3, 25))
            a1, b1 = recombine(f, phi, y, RgaMode.AFFINE)
            a2, b2 = recombine(f, phi, y, RgaMode.CONVEX)
            sse_affine = np.sum((y - a1 * f - b1 * phi) ** 2)
            sse_convex = np.sum((y - a2 * f - b2 * phi) ** 2)
            assert sse_affine <= sse_convex + 1e-12

    def test_convex_lambda_in_unit_interval(self, rng):
        """convex 모드의 a = 1 - λ 는 [0, 1]"""
        for _ in range(20):
            f, phi, y = rng.standard_normal((3, 25))
            a, _ = recombine(f, phi, y, RgaMode.CONVEX)
            assert 0.0 <= a <= 1.0

    def test_backfit_weights_recover_coefficients(self, rng):
        """정규방정식 해는 선형 결합 계수를 복원"""
        phi = rng.standard_normal((50, 4))
        w = rng.standard_normal(4)
        got = backfit_weights(phi.T @ phi, phi.T @ (phi @ w))
        assert got == pytest.approx(w, rel=1e-6, abs=1e-9)
        assert backfit_weights(np.zeros((0, 0)), np.zeros(0)).size == 0

    def test_length_mismatch(self):
        """길이가 다르면 도메인 오류"""
        with pytest.raises(DomainError):
            recombine(np.zeros(3), np.zeros(4), np.zeros(3), RgaMode.AFFINE)


class TestFitRga:
    """탐욕 적합 테스트"""

    @pytest.fixture
    def grid(self, market_2d):
        return split(build_grid(market_2d, 1.0, 1.5, 512, SobolConfig(dimension=2)), 0.2, seed=5)

    def test_zero_target(self, grid):
        """목표가 0 이면 항 없이 검증 MSE 0"""
        mixture, report = fit_rga(grid.points, np.zeros(grid.n_g), grid.train_idx, grid.val_idx, FAST_FIT)
        assert mixture.n_terms == 0
        assert report.val_mse_trace[-1] == 0.0

    def test_constant_target(self, grid):
        """상수 목표는 오프셋만으로 표현"""
        mixture, report = fit_rga(grid.points, np.full(grid.n_g, 3.0), grid.train_idx, grid.val_idx, FAST_FIT)
        assert mixture.n_terms == 0
        assert report.offset == 3.0
        assert report.residual_val_rms == 0.0

    def test_exact_recovery(self, grid):
        """사다리 위의 단일 가우시안 목표는 정확히 복원"""
        xs = grid.points
        center = xs[grid.train_idx[0]]
        precision = base_precision(xs[grid.train_idx])
        target = _single(2, 1.0, precision, center)
        ys = evaluate(target, xs)
        cfg = FitConfig(max_terms=3, n_center_candidates=8, n_precision_scales=5, center_targets=False)
        mixture, report = fit_rga(xs, ys, grid.train_idx, grid.val_idx, cfg)
        assert 1 <= mixture.n_terms <= 3
        assert report.residual_val_rms <= 1e-3

    def test_validation_trace_decreases(self, grid):
        """받아들인 항마다 검증 MSE 가 엄격히 감소"""
        xs = grid.points
        ys = np.maximum(100.0 - np.exp(xs).min(axis=1), 0.0)
        _, report = fit_rga(xs, ys, grid.train_idx, grid.val_idx, FAST_FIT)
        trace = report.val_mse_trace
        assert len(trace) == report.n_terms_selected + 1
        assert all(later < earlier for earlier, later in zip(trace, trace[1:]))
        assert trace[-1] == min(trace)
        assert report.residual_val_rms == pytest.approx(np.sqrt(trace[-1]))

    def test_backfit_improves_put_surface(self, grid):
        """계수 재적합을 켜면 같은 항 수 상한에서 검증 오차가 더 작음"""
        xs = grid.points
        ys = np.maximum(100.0 - np.exp(xs).min(axis=1), 0.0)
        cfg = FitConfig(max_terms=40, n_center_candidates=16, n_precision_scales=5, refine_iters=4, patience=5)
        _, plain = fit_rga(xs, ys, grid.train_idx, grid.val_idx, cfg.model_copy(update={"backfit": False}))
        _, refit = fit_rga(xs, ys, grid.train_idx, grid.val_idx, cfg)
        assert refit.residual_val_rms < plain.residual_val_rms
        assert refit.val_mse_trace[-1] == min(refit.val_mse_trace)

    def test_backfit_ignored_in_convex_mode(self, grid):
        """convex 모드에서는 backfit 설정이 결과를 바꾸지 않음"""
        xs = grid.points
        ys = np.maximum(100.0 - np.exp(xs).min(axis=1), 0.0)
        cfg = FAST_FIT.model_copy(update={"rga_mode": RgaMode.CONVEX})
        m1, _ = fit_rga(xs, ys, grid.train_idx, grid.val_idx, cfg)
        m2, _ = fit_rga(xs, ys, grid.train_idx, grid.val_idx, cfg.model_copy(update={"backfit": False}))
        assert np.array_equal(m1.weights, m2.weights)

    def test_permutation_invariance(self, grid, rng):
        """표본 순서를 바꿔도 같은 혼합"""
        xs = grid.points
        ys = np.maximum(100.0 - np.exp(xs).min(axis=1), 0.0)
        perm = rng.permutation(grid.n_g)
        inverse = np.argsort(perm)
        m1, _ = fit_rga(xs, ys, grid.train_idx, grid.val_idx, FAST_FIT)
        m2, _ = fit_rga(xs[perm], ys[perm], inverse[grid.train_idx], inverse[grid.val_idx], FAST_FIT)
        assert np.array_equal(m1.weights, m2.weights)
        assert np.array_equal(m1.centers, m2.centers)

    def test_workers_do_not_change_fit(self, grid):
        """작업자 수와 무관하게 같은 혼합"""
        xs = grid.points
        ys = np.maximum(100.0 - np.exp(xs).min(axis=1), 0.0)
        m1, _ = fit_rga(xs, ys, grid.train_idx, grid.val_idx, FAST_FIT, workers=1)
        m2, _ = fit_rga(xs, ys, grid.train_idx, grid.val_idx, FAST_FIT, workers=3)
        assert np.array_equal(m1.weights, m2.weights)

    def test_too_few_training_points(self, grid):
        """학습점이 d+2 보다 적으면 도메인 오류"""
        with pytest.raises(DomainError):
            fit_rga(grid.points, np.zeros(grid.n_g), grid.train_idx[:3], grid.val_idx, FAST_FIT)

    def test_non_finite_target(self, grid):
        """유한하지 않은 목표는 적합 실패"""
        ys = np.zeros(grid.n_g)
        ys[grid.train_idx[4]] = np.nan
        with pytest.raises(FitFailure):
            fit_rga(grid.points, ys, grid.train_idx, grid.val_idx, FAST_FIT)


class TestRateCheck:
    """정리 수렴률 점검 테스트"""

    def test_single_term_target(self):
        """항 하나짜리 목표는 한 번에 복원"""
        target = _single(2, 1.0, np.eye(2), np.zeros(2))
        result = theorem_rate_check(target, max_terms=3)
        assert result.rows[0].eps_sq == pytest.approx(0.0, abs=1e-10)
        assert result.all_hold

    def test_bound_holds_with_exact_dictionary(self):
        """가설 충족 시 모든 n 에서 상한 충족"""
        rng = np.random.default_rng(3)
        target = synthetic_target(2, 5, 3.0, rng)
        result = theorem_rate_check(target, max_terms=20, alpha=0.5)
        assert result.hypothesis_met
        assert result.all_hold
        row = result.rows[-1]
        assert row.n == 20
        assert row.bound == pytest.approx(4.0 * (target.coef_mass + 1.0) ** 2 / 20)
        assert row.zero_eps_bound == pytest.approx((target.coef_mass + 1.0) ** 2 / 20)

    def test_error_non_increasing(self):
        """ε_n² 은 n 에 대해 증가하지 않음"""
        target = synthetic_target(3, 5, 2.0, np.random.default_rng(8))
        eps = [row.eps_sq for row in theorem_rate_check(target, max_terms=15).rows]
        assert all(later <= earlier + 1e-12 for earlier, later in zip(eps, eps[1:]))

    def test_perturbed_dictionary_reports_unmet(self):
        """목표 항이 사전에 없으면 가설 미충족으로 표시"""
        target = synthetic_target(1, 3, 2.0, np.random.default_rng(1))
        result = theorem_rate_check(target, max_terms=5, exact_dictionary=False)
        assert not result.hypothesis_met

    def test_epsilon_column(self):
        """ε > 0 이면 보조 상한 열이 채워짐"""
        target = synthetic_target(1, 3, 2.0, np.random.default_rng(1))
        result = theorem_rate_check(target, max_terms=2, epsilon=0.1)
        assert all(row.eps_bound is not None for row in result.rows)

    def test_alpha_out_of_range(self):
        """α 는 (0, 1)"""
        with pytest.raises(DomainError):
            rate_bound(1.0, 1, 1.0)


class TestMixtureFile:
    """혼합 파일 테스트"""

    def test_round_trip(self, rng, tmp_path):
        """저장 후 불러오면 비트 단위로 같음"""
        mixture = synthetic_target(3, 4, 2.0, rng)
        path = dump_mixture(mixture, tmp_path / "slice_000.mix", offset=1.25)
        loaded, offset = load_mixture(path)
        assert offset == 1.25
        assert np.array_equal(loaded.weights, mixture.weights)
        assert np.array_equal(loaded.precisions, mixture.precisions)
        assert path.read_text().startswith("# gaussian-mixture d=3 terms=4 offset=1.25")

    def test_empty_mixture(self, tmp_path):
        """항이 없는 혼합"""
        path = dump_mixture(GaussianMixture.empty(2), tmp_path / "empty.mix", offset=-0.5)
        loaded, offset = load_mixture(path)
        assert loaded.n_terms == 0 and loaded.d == 2
        assert offset == -0.5

    def test_bad_header(self, tmp_path):
        """머리말이 없으면 도메인 오류"""
        path = tmp_path / "bad.mix"
        path.write_text("1.0 2.0\n")
        with pytest.raises(DomainError):
            load_mixture(path)

    def test_non_spd_term(self, tmp_path):
        """정밀도가 양정치가 아닌 항은 도메인 오류"""
        path = tmp_path / "bad_term.mix"
        path.write_text("# gaussian-mixture d=2 terms=1 offset=0.0\n1.0 0.0 0.0 1.0 0.0 0.0 -1.0\n")
        with pytest.raises(DomainError):
            load_mixture(path)

    def test_terms_view(self, rng):
        """항 목록으로 풀었다가 다시 묶어도 같은 혼합"""
        mixture = synthetic_target(2, 3, 2.0, rng)
        terms = mixture.terms
        assert [t.weight for t in terms] == mixture.weights.tolist()
        rebuilt = GaussianMixture.from_terms(2, terms)
        assert np.array_equal(rebuilt.centers, mixture.centers)
        assert np.array_equal(rebuilt.precisions, mixture.precisions)
        assert GaussianMixture.from_terms(2, []).n_terms == 0
