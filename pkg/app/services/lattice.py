"""
보간 격자(Interpolative Lattice) 가격 엔진

하나의 준난수 격자 위에서 역방향 벨만 재귀를 수행하고,
각 시점의 연속 가치를 가우시안 혼합 곡면으로 적합해 보관합니다.
연속 가치는 후손 점 군집 평균(cluster) 또는 가우시안의 해석적 역전파(analytic)로 계산합니다.
"""

import time
import warnings
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from app.core.errors import ConfigurationError, DomainError, FitFailure
from app.core.streams import StreamTag, chunked, parallel_map, substream
from app.schemas.grid import Grid, SobolConfig
from app.schemas.market import MarketParams, PayoffSpec, TimeGrid
from app.schemas.mixture import FitReport, GaussianMixture, Surface
from app.schemas.pricing import DescendantScheme, PricerConfig, PriceResult, Propagation
from app.services import approx
from app.services.gridgen import build_grid, split
from app.services.model import factor_covariance, log_payoff, log_step_moments, payoff, step_log_prices
from loguru import logger

# 한 번에 평가할 후손 점 수 상한 (격자점 조각 크기 결정용)
_CLOUD_BLOCK = 65536

ValueFunction = Callable[[np.ndarray], np.ndarray]


def propagate_analytic(mixture: GaussianMixture, params: MarketParams, dt: float, r: float) -> GaussianMixture:
    """
    가우시안 혼합의 한 단계 역전파 e^{-r·dt}·E[mixture(z + m + ξ)]

    항마다 공분산 B⁻¹ + Σ̃, 중심 C - m 인 항으로 옮기고,
    계수는 정규화 진폭 비 (det B'/det B)^{1/4} 와 할인 계수로 다시 맞춥니다.

    Args:
        mixture: 다음 시점의 혼합
        params: 시장 명세
        dt: 시간 간격 (> 0)
        r: 할인율

    Returns:
        GaussianMixture: 같은 항 수의 혼합
    """
    mean, cov = log_step_moments(params, dt)
    if mixture.n_terms == 0:
        return mixture
    inv_b = np.linalg.inv(mixture.precisions)
    new_prec = np.linalg.inv(inv_b + cov[None, :, :])
    new_prec = 0.5 * (new_prec + np.swapaxes(new_prec, -1, -2))
    _, logdet_old = np.linalg.slogdet(mixture.precisions)
    _, logdet_new = np.linalg.slogdet(new_prec)
    scale = np.exp(-r * dt + 0.25 * (logdet_new - logdet_old))
    return GaussianMixture(
        d=mixture.d,
        weights=mixture.weights * scale,
        centers=mixture.centers - mean[None, :],
        precisions=new_prec,
    )


def propagate_surface(surface: Surface, params: MarketParams, dt: float, r: float) -> Surface:
    """곡면(혼합 + 오프셋)의 한 단계 역전파"""
    return Surface(
        mixture=propagate_analytic(surface.mixture, params, dt, r),
        offset=float(np.exp(-r * dt) * surface.offset),
    )


def _standard_draws(rng: np.random.Generator, n: int, d: int, scheme: DescendantScheme) -> np.ndarray:
    """방식별 표준 정규 표본 (n, d)"""
    if scheme == DescendantScheme.ANTITHETIC:
        if n % 2:
            raise ConfigurationError(f"antithetic 방식은 짝수 개의 후손 점이 필요합니다: {n}", path="pricer.n_descendants")
        half = rng.standard_normal((n // 2, d))
        return np.concatenate([half, -half])
    if scheme == DescendantScheme.SOBOL:
        sampler = qmc.Sobol(d=d, scramble=True, seed=rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            u = sampler.random(n)
        return ndtri(np.clip(u, np.finfo(float).eps, 1.0 - np.finfo(float).eps))
    return rng.standard_normal((n, d))


def descendants(
    x: np.ndarray,
    params: MarketParams,
    dt: float,
    n: int,
    scheme: DescendantScheme | str = DescendantScheme.ANTITHETIC,
    seed: int = 0,
    slice_index: int = 0,
    point_index: int = 0,
) -> np.ndarray:
    """
    로그 가격 x 에서 한 단계 뒤의 후손 점 D(x)

    정확한 로그 가격 전이에서 뽑으며, 스트림은 (seed, slice_index, point_index) 로 결정됩니다.

    Args:
        x: 로그 가격 (d)
        params: 시장 명세
        dt: 시간 간격
        n: 후손 점 수 (>= 2)
        scheme: pseudo | antithetic | sobol
        seed: 시드
        slice_index: 시점 인덱스
        point_index: 격자점 인덱스

    Returns:
        np.ndarray: (n, d) 로그 가격

    Raises:
        ConfigurationError: antithetic 방식에서 n 이 홀수
    """
    if n < 2:
        raise DomainError(f"후손 점 수는 2 이상이어야 합니다: {n}")
    x = np.asarray(x, dtype=float)
    rng = substream(seed, StreamTag.DESCENDANTS, slice_index, point_index)
    z = _standard_draws(rng, n, params.d, DescendantScheme(scheme))
    return step_log_prices(x, params, dt, z)


def continuation_cluster(value_fn: ValueFunction | Surface, cloud: np.ndarray, r: float, dt: float) -> float:
    """
    후손 점 군집 평균으로 계산한 연속 가치 e^{-r·dt}·mean(V(y))

    Args:
        value_fn: 다음 시점 가치 함수 또는 곡면
        cloud: (n, d) 후손 점
        r: 할인율
        dt: 시간 간격
    """
    if isinstance(value_fn, Surface):
        values = approx.evaluate_surface(value_fn, cloud)
    else:
        values = value_fn(cloud)
    return float(np.exp(-r * dt) * np.mean(values))


class LatticePricer:
    """
    역방향 귀납 실행기

    시점 m 에서 수익으로 시작해 t = m-1..0 순서로 연속 가치를 계산하고 곡면을 적합합니다.
    """

    def __init__(self, params: MarketParams, spec: PayoffSpec, tg: TimeGrid, grid: Grid, cfg: PricerConfig):
        if grid.d != params.d:
            raise DomainError(f"격자 차원 {grid.d} 과 시장 차원 {params.d} 이 다릅니다.")
        if cfg.descendant_scheme == DescendantScheme.ANTITHETIC and cfg.n_descendants % 2:
            raise ConfigurationError(
                f"antithetic 방식은 짝수 개의 후손 점이 필요합니다: {cfg.n_descendants}",
                path="pricer.n_descendants",
            )
        self.params = params
        self.spec = spec
        self.tg = tg
        self.grid = grid
        self.cfg = cfg
        self.factor = factor_covariance(log_step_moments(params, tg.dt)[1])
        self.discount = float(np.exp(-params.r * tg.dt))

    def value_function(self, t: int, surface: Optional[Surface]) -> ValueFunction:
        """시점 t 의 가치 함수 (만기면 수익, 아니면 max(수익, 곡면) 또는 곡면)"""
        if t == self.tg.steps or surface is None:
            return lambda y: log_payoff(self.spec, y)
        if self.spec.american:
            return lambda y: np.maximum(log_payoff(self.spec, y), approx.evaluate_surface(surface, y))
        return lambda y: np.asarray(approx.evaluate_surface(surface, y), dtype=float)

    def _clouds(self, t: int, indices: np.ndarray) -> np.ndarray:
        """격자점 조각의 후손 점 (len, n, d)"""
        n, d = self.cfg.n_descendants, self.params.d
        points = self.grid.points[indices]
        z = np.stack(
            [
                _standard_draws(substream(self.cfg.seed, StreamTag.DESCENDANTS, t, int(i)), n, d, self.cfg.descendant_scheme)
                for i in indices
            ]
        )
        return step_log_prices(points[:, None, :], self.params, self.tg.dt, z, self.factor)

    def continuation(self, t: int, next_surface: Optional[Surface]) -> np.ndarray:
        """
        시점 t 의 격자점별 연속 가치

        analytic 모드에서 다음 시점 가치가 곡면이면(만기 직전이 아니면) 역전파 곡면을 쓰되,
        American 이면 후손 군집 전체에서 수익이 0 이고 곡면이 0 이상인 격자점에만 적용합니다.
        """
        next_t = t + 1
        value_fn = self.value_function(next_t, next_surface)
        analytic = self.cfg.propagation == Propagation.ANALYTIC and next_t < self.tg.steps and next_surface is not None
        propagated = propagate_surface(next_surface, self.params, self.tg.dt, self.params.r) if analytic else None

        if analytic and not self.spec.american:
            return np.asarray(approx.evaluate_surface(propagated, self.grid.points), dtype=float)

        n, d = self.cfg.n_descendants, self.params.d
        size = max(1, _CLOUD_BLOCK // n)

        def run_chunk(indices: np.ndarray) -> np.ndarray:
            clouds = self._clouds(t, indices)
            flat = clouds.reshape(-1, d)
            values = value_fn(flat).reshape(len(indices), n)
            out = self.discount * values.mean(axis=1)
            if propagated is not None:
                smooth = np.all(log_payoff(self.spec, flat).reshape(len(indices), n) == 0.0, axis=1)
                surf_values = np.asarray(approx.evaluate_surface(next_surface, flat)).reshape(len(indices), n)
                smooth &= np.all(surf_values >= 0.0, axis=1)
                if np.any(smooth):
                    exact = approx.evaluate_surface(propagated, self.grid.points[indices[smooth]])
                    out[smooth] = exact
            return out

        chunks = chunked(np.arange(self.grid.n_g), size)
        return np.concatenate(parallel_map(run_chunk, chunks, self.cfg.workers))

    def fit_slice(self, t: int, targets: np.ndarray) -> tuple[Surface, FitReport]:
        """연속 가치 목표를 곡면으로 적합 (실패하면 시점 인덱스와 함께 FitFailure)"""
        if not np.all(np.isfinite(targets)):
            raise FitFailure("연속 가치 목표에 유한하지 않은 값이 있습니다.", slice_index=t)
        try:
            surface, report = approx.fit_surface(
                self.grid.points,
                targets,
                self.grid.train_idx,
                self.grid.val_idx,
                self.cfg.fit,
                self.cfg.workers,
            )
        except FitFailure as e:
            raise FitFailure(e.message, slice_index=t, report=e.report) from e
        except np.linalg.LinAlgError as e:
            raise FitFailure(f"선형대수 오류: {e}", slice_index=t) from e
        fitted = approx.evaluate_surface(surface, self.grid.points)
        if not np.all(np.isfinite(fitted)):
            raise FitFailure("적합 곡면이 유한하지 않은 값을 냅니다.", slice_index=t, report=report)
        return surface, report

    def run(self) -> PriceResult:
        """역방향 귀납 실행"""
        m = self.tg.steps
        surfaces: list[Optional[Surface]] = [None] * m
        reports: list[Optional[FitReport]] = [None] * m
        timing = {"continuation": 0.0, "fit": 0.0}
        started = time.perf_counter()

        next_surface: Optional[Surface] = None
        for t in range(m - 1, -1, -1):
            tick = time.perf_counter()
            targets = self.continuation(t, next_surface)
            timing["continuation"] += time.perf_counter() - tick

            tick = time.perf_counter()
            surface, report = self.fit_slice(t, targets)
            elapsed = time.perf_counter() - tick
            timing["fit"] += elapsed

            surfaces[t], reports[t] = surface, report
            next_surface = surface
            logger.info(
                f"시점 {t} 적합 완료: 항 수={report.n_terms_selected}, "
                f"검증 RMS={report.residual_val_rms:.3e}, {elapsed:.2f}s"
            )

        spot_log = self.params.log_spot
        continuation0 = float(approx.evaluate_surface(surfaces[0], spot_log))
        if self.spec.american:
            value0 = max(float(payoff(self.spec, self.params.spot_array)), continuation0)
        else:
            value0 = continuation0
        timing["total"] = time.perf_counter() - started

        return PriceResult(
            value0=value0,
            surfaces=surfaces,
            fit_reports=reports,
            timing=timing,
            market=self.params,
            payoff=self.spec,
            time_grid=self.tg,
        )


def backward_induct(
    params: MarketParams,
    spec: PayoffSpec,
    tg: TimeGrid,
    grid: Grid,
    cfg: Optional[PricerConfig] = None,
) -> PriceResult:
    """
    보간 격자 역방향 귀납

    Args:
        params: 시장 명세
        spec: 수익 구조 (행사 방식 포함)
        tg: 시점 격자
        grid: 학습/검증 분할이 된 격자
        cfg: 엔진 설정

    Returns:
        PriceResult: 시점별 곡면과 t=0 가격

    Raises:
        FitFailure: 어느 시점에서든 적합이 실패한 경우 (시점 인덱스 포함)
    """
    return LatticePricer(params, spec, tg, grid, cfg or PricerConfig()).run()


def price_at(result: PriceResult, prices: np.ndarray, t_slice: int) -> np.ndarray | float:
    """
    임의 가격/시점에서의 가치

    만기 시점은 수익, American 은 max(수익, 곡면), European 내부 시점은 곡면 값입니다.

    Raises:
        DomainError: 시점 인덱스가 범위를 벗어나거나 가격이 양수가 아닌 경우
    """
    m = result.time_grid.steps
    if not 0 <= t_slice <= m:
        raise DomainError(f"시점 인덱스는 0..{m} 이어야 합니다: {t_slice}")
    s = np.asarray(prices, dtype=float)
    intrinsic = payoff(result.payoff, s)
    if t_slice == m:
        return intrinsic
    continuation = approx.evaluate_surface(result.surfaces[t_slice], np.log(s))
    if result.payoff.american:
        value = np.maximum(intrinsic, continuation)
        return float(value) if np.ndim(value) == 0 else value
    return continuation


def finite_difference_delta(
    result: PriceResult,
    prices: np.ndarray,
    t_slice: int = 0,
    bump: float = 0.01,
) -> np.ndarray:
    """
    중앙 차분 델타 ∂V/∂S_i (상대 bump)

    Returns:
        np.ndarray: (d) 델타 벡터
    """
    if not 0.0 < bump < 1.0:
        raise DomainError(f"bump 는 (0, 1) 안에 있어야 합니다: {bump}")
    s = np.asarray(prices, dtype=float)
    deltas = np.empty(s.shape[0])
    for i in range(s.shape[0]):
        h = bump * s[i]
        up, down = s.copy(), s.copy()
        up[i] += h
        down[i] -= h
        deltas[i] = (float(price_at(result, up, t_slice)) - float(price_at(result, down, t_slice))) / (2.0 * h)
    return deltas


def escalate_grid(
    params: MarketParams,
    spec: PayoffSpec,
    tg: TimeGrid,
    cfg: PricerConfig,
    *,
    n_points: int,
    horizon: float,
    spread: float,
    sobol: SobolConfig,
    val_fraction: float,
    split_seed: int,
    target_val_rms: Optional[float] = None,
    max_points: Optional[int] = None,
) -> tuple[PriceResult, Grid]:
    """
    교차 검증 기반 격자 확대

    시점 0 적합의 검증 RMS 가 목표보다 크면 격자 점 수를 두 배로 늘려 다시 계산합니다.
    목표가 없으면 한 번만 계산합니다.

    Returns:
        (PriceResult, Grid): 마지막 결과와 사용한 격자
    """
    cap = max_points or n_points
    n = n_points
    while True:
        grid = split(build_grid(params, horizon, spread, n, sobol), val_fraction, split_seed)
        result = backward_induct(params, spec, tg, grid, cfg)
        rms = result.fit_reports[0].residual_val_rms
        if target_val_rms is None or rms <= target_val_rms or 2 * n > cap:
            if target_val_rms is not None and rms > target_val_rms:
                logger.warning(f"격자 상한 {cap} 에서도 검증 RMS {rms:.3e} 가 목표 {target_val_rms:.3e} 보다 큽니다.")
            return result, grid
        logger.info(f"검증 RMS {rms:.3e} > 목표 {target_val_rms:.3e}: 격자 {n} → {2 * n}")
        n *= 2


MANIFEST_HEADER = "# interpolative-lattice manifest v1"


def export_result(result: PriceResult, out_dir: str | Path, config_echo: Optional[str] = None) -> Path:
    """
    시점별 혼합 파일(slice_XXX.mix)과 manifest.txt 저장

    Returns:
        Path: manifest 경로
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for t, surface in enumerate(result.surfaces):
        name = f"slice_{t:03d}.mix"
        approx.dump_mixture(surface.mixture, out / name, offset=surface.offset)
        names.append(name)

    lines = [
        MANIFEST_HEADER,
        f"value0={result.value0!r}",
        f"d={result.market.d}",
        f"steps={result.time_grid.steps}",
        f"maturity={result.time_grid.maturity!r}",
        f"payoff={result.payoff.kind.value}",
        f"strike={result.payoff.strike!r}",
        f"style={result.payoff.style.value}",
        f"slices={','.join(names)}",
    ]
    lines += [f"timing.{key}={value:.3f}" for key, value in result.timing.items()]
    if config_echo:
        lines += ["[config]", config_echo.rstrip("\n")]
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def load_surfaces(out_dir: str | Path, steps: int) -> list[Surface]:
    """export_result 로 저장한 곡면 불러오기"""
    out = Path(out_dir)
    surfaces = []
    for t in range(steps):
        mixture, offset = approx.load_mixture(out / f"slice_{t:03d}.mix")
        surfaces.append(Surface(mixture=mixture, offset=offset))
    return surfaces
