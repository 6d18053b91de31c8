"""
가격 상하한 추정 서비스

하한: 적합 곡면이 정하는 정지 규칙(수익 >= 연속 가치 이고 수익 > 0 이면 행사)을 따르는 몬테카를로.
상한: 가치 함수의 마팅게일 증류로 만든 마팅게일을 벌점으로 쓰는 쌍대 추정.

마팅게일 계산은 모두 할인된 값으로 합니다.
D_t = e^{-rt}·M_t,  D_0 = V̄(x_0, 0),  D_{t+1} = D_t + V̄(x_{t+1}, t+1) - Ê_t[V̄(x_{t+1}, t+1)]
v_upper = E[max_t (e^{-rt}·π(x_t) - D_t)] + D_0
"""

from typing import Optional

import numpy as np

from app.core.errors import DomainError
from app.core.streams import StreamTag, parallel_map, path_blocks, substream
from app.schemas.market import MarketParams, PayoffSpec, TimeGrid
from app.schemas.pricing import BoundsConfig, BoundsResult, PriceResult
from app.services import approx
from app.services.model import discount_factors, factor_covariance, log_payoff, log_step_moments, simulate_paths, step_log_prices
from loguru import logger


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    """표본 평균과 표준오차 (표본이 하나면 se = 0)"""
    n = values.shape[0]
    mean = float(np.mean(values))
    if n < 2:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / np.sqrt(n))


def discounted_value(result: PriceResult, t: int, log_prices: np.ndarray) -> np.ndarray:
    """
    할인 가치 함수 V̄(x, t)

    만기는 e^{-rT}·π, American 내부 시점은 e^{-rt}·max(V̂, π), European 내부 시점은 e^{-rt}·V̂ 입니다.
    """
    tg = result.time_grid
    disc = float(np.exp(-result.market.r * tg.time_of(t)))
    intrinsic = log_payoff(result.payoff, log_prices)
    if t == tg.steps:
        return disc * intrinsic
    continuation = np.asarray(approx.evaluate_surface(result.surfaces[t], log_prices), dtype=float)
    if result.payoff.american:
        return disc * np.maximum(continuation, intrinsic)
    return disc * continuation


def lower_bound(
    result: PriceResult,
    params: MarketParams,
    spec: PayoffSpec,
    tg: TimeGrid,
    cfg: BoundsConfig,
) -> tuple[float, float]:
    """
    정지 규칙 몬테카를로 하한

    시점 t < m 에서 π(x_t) > 0 이고 π(x_t) >= V̂(x_t, t) 이면 행사하고,
    끝까지 행사하지 않은 경로는 만기 수익을 받습니다. European 이면 만기에만 행사합니다.

    Returns:
        (v_lower, se)
    """
    _check_result(result, params, tg)
    paths = simulate_paths(params, tg, cfg.n_paths_lower, cfg.seed, cfg.workers)
    logs = np.log(paths)
    discounts = discount_factors(params.r, tg)
    n = paths.shape[0]

    cashflow = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    if spec.american:
        for t in range(tg.steps):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            intrinsic = log_payoff(spec, logs[idx, t])
            continuation = np.asarray(approx.evaluate_surface(result.surfaces[t], logs[idx, t]), dtype=float)
            stop = (intrinsic > 0.0) & (intrinsic >= continuation)
            cashflow[idx[stop]] = discounts[t] * intrinsic[stop]
            alive[idx[stop]] = False
    idx = np.flatnonzero(alive)
    cashflow[idx] = discounts[-1] * log_payoff(spec, logs[idx, -1])

    v, se = _mean_and_se(cashflow)
    logger.info(f"하한 추정: {v:.6f} ± {se:.6f} (경로 {n})")
    return v, se


def _inner_normals(seed: int, path_index: int, t: int, n_inner: int, d: int) -> np.ndarray:
    """(seed, 경로, 시점) 로 결정되는 내부 표본 (짝수면 antithetic)"""
    rng = substream(seed, StreamTag.INNER, path_index, t)
    if n_inner % 2 == 0:
        half = rng.standard_normal((n_inner // 2, d))
        return np.concatenate([half, -half])
    return rng.standard_normal((n_inner, d))


def _martingale_block(
    result: PriceResult,
    logs: np.ndarray,
    start: int,
    n_inner: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """
    경로 묶음의 할인 마팅게일

    Args:
        logs: (P, m+1, d) 로그 가격 경로
        start: 첫 경로의 전역 인덱스 (내부 스트림 키)

    Returns:
        (D, increments): (P, m+1) 할인 마팅게일, (P, m) 증분
    """
    n_p, steps_plus, d = logs.shape
    m = steps_plus - 1
    params = result.market
    dt = result.time_grid.dt
    factor = factor_covariance(log_step_moments(params, dt)[1])

    martingale = np.empty((n_p, m + 1))
    increments = np.empty((n_p, m))
    martingale[:, 0] = discounted_value(result, 0, logs[:, 0])
    for t in range(m):
        z = np.stack([_inner_normals(seed, start + p, t, n_inner, d) for p in range(n_p)])
        inner = step_log_prices(logs[:, t][:, None, :], params, dt, z, factor)
        expected = discounted_value(result, t + 1, inner.reshape(-1, d)).reshape(n_p, n_inner).mean(axis=1)
        realized = discounted_value(result, t + 1, logs[:, t + 1])
        increments[:, t] = realized - expected
        martingale[:, t + 1] = martingale[:, t] + increments[:, t]
    return martingale, increments


def martingale_path(
    result: PriceResult,
    path: np.ndarray,
    n_inner: int,
    seed: int,
    path_index: int = 0,
) -> np.ndarray:
    """
    경로 하나의 할인 마팅게일 D_t = e^{-rt}·M_t (t = 0..m)

    Args:
        result: 역방향 귀납 결과
        path: (m+1, d) 가격 경로
        n_inner: 내부 표본 수 (>= 1)
        seed: 내부 표본 시드
        path_index: 경로 인덱스 (내부 스트림 키)

    Returns:
        np.ndarray: (m+1) 할인 마팅게일 값, D_0 = max(V̂(x_0, 0), π(x_0))
    """
    if n_inner < 1:
        raise DomainError(f"n_inner 는 1 이상이어야 합니다: {n_inner}")
    path = np.asarray(path, dtype=float)
    if path.shape != (result.time_grid.steps + 1, result.market.d):
        raise DomainError(f"경로 모양이 (m+1, d) 와 다릅니다: {path.shape}")
    martingale, _ = _martingale_block(result, np.log(path)[None, :, :], path_index, n_inner, seed)
    return martingale[0]


def _upper_statistics(
    result: PriceResult,
    params: MarketParams,
    spec: PayoffSpec,
    tg: TimeGrid,
    cfg: BoundsConfig,
) -> tuple[float, float, float, float]:
    """상한과 증분 통계 (v_upper, se_upper, mean_increment, se_increment)"""
    _check_result(result, params, tg)
    paths = simulate_paths(params, tg, cfg.n_paths_outer, cfg.seed, cfg.workers, tag=StreamTag.OUTER)
    logs = np.log(paths)
    discounts = discount_factors(params.r, tg)

    def run_block(block: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray]:
        _, start, stop = block
        chunk = logs[start:stop]
        martingale, increments = _martingale_block(result, chunk, start, cfg.n_inner, cfg.seed)
        n_p = chunk.shape[0]
        penalised = discounts[None, :] * log_payoff(spec, chunk.reshape(-1, params.d)).reshape(n_p, -1) - martingale
        if spec.american:
            best = penalised.max(axis=1)
        else:
            best = penalised[:, -1]
        return best + martingale[:, 0], increments

    # 내부 표본 메모리를 제한하려고 작은 블록으로 나눔
    parts = parallel_map(run_block, path_blocks(paths.shape[0], 256), cfg.workers)
    upper_samples = np.concatenate([p[0] for p in parts])
    increments = np.concatenate([p[1].ravel() for p in parts])
    v, se = _mean_and_se(upper_samples)
    mean_inc, se_inc = _mean_and_se(increments)
    return v, se, mean_inc, se_inc


def upper_bound(
    result: PriceResult,
    params: MarketParams,
    spec: PayoffSpec,
    tg: TimeGrid,
    cfg: BoundsConfig,
) -> tuple[float, float]:
    """
    마팅게일 쌍대 상한

    Returns:
        (v_upper, se)
    """
    v, se, _, _ = _upper_statistics(result, params, spec, tg, cfg)
    logger.info(f"상한 추정: {v:.6f} ± {se:.6f} (외부 경로 {cfg.n_paths_outer}, 내부 {cfg.n_inner})")
    return v, se


def compute_bounds(result: PriceResult, cfg: Optional[BoundsConfig] = None) -> BoundsResult:
    """하한/상한과 마팅게일 증분 점검을 한 번에 계산"""
    cfg = cfg or BoundsConfig()
    params, spec, tg = result.market, result.payoff, result.time_grid
    v_lower, se_lower = lower_bound(result, params, spec, tg, cfg)
    v_upper, se_upper, mean_inc, se_inc = _upper_statistics(result, params, spec, tg, cfg)
    bounds = BoundsResult(
        v_lower=v_lower,
        se_lower=se_lower,
        v_upper=v_upper,
        se_upper=se_upper,
        mean_increment=mean_inc,
        se_increment=se_inc,
    )
    logger.info(f"상하한: [{v_lower:.6f}, {v_upper:.6f}], 간격 {bounds.gap:.6f}")
    if v_lower - 3 * se_lower > v_upper + 3 * se_upper:
        logger.warning("하한이 상한을 통계적으로 넘습니다. 적합 품질이나 표본 수를 확인하세요.")
    return bounds


def _check_result(result: PriceResult, params: MarketParams, tg: TimeGrid) -> None:
    if len(result.surfaces) != tg.steps or result.market.d != params.d:
        raise DomainError("PriceResult 의 곡면이 모든 시점을 덮지 않거나 차원이 다릅니다.")
