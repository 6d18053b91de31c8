"""
위험중립 팩터 동역학 서비스

레인보우 수익 계산, 로그 가격 한 단계 전이 모멘트, 정확한 GBM 경로 시뮬레이션을 제공합니다.
다른 모든 서비스 모듈이 이 모듈을 사용합니다.
"""

from typing import Optional

import numpy as np

from app.core.errors import DomainError
from app.core.streams import StreamTag, parallel_map, path_blocks, substream
from app.schemas.market import PSD_RELATIVE_TOLERANCE, MarketParams, PayoffKind, PayoffSpec, TimeGrid


def payoff(spec: PayoffSpec, prices: np.ndarray) -> np.ndarray | float:
    """
    레인보우 수익 계산

    Args:
        spec: 수익 구조
        prices: 가격 벡터 (d) 또는 가격 배열 (..., d)

    Returns:
        max(f(K, S), 0): 입력이 벡터면 float, 배열이면 (...) 모양 배열

    Raises:
        DomainError: 양수가 아닌 가격이 있는 경우
    """
    s = np.asarray(prices, dtype=float)
    if np.any(~(s > 0)):
        raise DomainError("가격은 모두 양수여야 합니다.")

    kind = spec.kind
    if kind in (PayoffKind.MIN_PUT, PayoffKind.MIN_CALL):
        level = s.min(axis=-1)
    elif kind in (PayoffKind.MAX_PUT, PayoffKind.MAX_CALL):
        level = s.max(axis=-1)
    elif kind.is_geometric:
        level = np.exp(np.log(s).mean(axis=-1))
    else:
        level = s.mean(axis=-1)

    value = spec.strike - level if kind.is_put else level - spec.strike
    value = np.maximum(value, 0.0)
    return float(value) if np.ndim(value) == 0 else value


def log_payoff(spec: PayoffSpec, log_prices: np.ndarray) -> np.ndarray:
    """로그 가격 좌표에서의 수익 (격자/후손 점 평가용)"""
    return np.asarray(payoff(spec, np.exp(log_prices)), dtype=float)


def log_step_moments(params: MarketParams, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """
    로그 가격 증분의 정확한 모멘트

    Args:
        params: 시장 명세
        dt: 시간 간격 (년, > 0)

    Returns:
        (mean, cov): mean_i = (r - sigma_ii/2)·dt, cov = sigma·dt
    """
    if not dt > 0:
        raise DomainError(f"dt 는 양수여야 합니다: {dt}")
    cov = params.cov
    mean = (params.r - 0.5 * np.diag(cov)) * dt
    return mean, cov * dt


def factor_covariance(cov: np.ndarray) -> np.ndarray:
    """
    공분산 행렬의 인수 L (L·Lᵀ = cov)

    촐레스키 분해가 실패하면(특이 행렬) 고유값 분해로 대체하고,
    최대 고유값 대비 1e-10 이내의 음수 고유값은 0으로 자릅니다.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        eig, vec = np.linalg.eigh(cov)
        scale = max(float(np.max(np.abs(eig))), 0.0)
        if eig.min() < -PSD_RELATIVE_TOLERANCE * scale:
            raise DomainError("공분산 행렬이 반정치가 아닙니다.")
        return vec * np.sqrt(np.clip(eig, 0.0, None))[None, :]


def step_log_prices(
    log_prices: np.ndarray,
    params: MarketParams,
    dt: float,
    normals: np.ndarray,
    factor: Optional[np.ndarray] = None,
) -> np.ndarray:
    """표준 정규 충격으로 로그 가격을 한 단계 진행"""
    mean, cov = log_step_moments(params, dt)
    chol = factor_covariance(cov) if factor is None else factor
    return log_prices + mean + normals @ chol.T


def simulate_paths(
    params: MarketParams,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    workers: int = 1,
    tag: StreamTag = StreamTag.PATHS,
) -> np.ndarray:
    """
    정확한 로그 공간 GBM 경로 시뮬레이션

    경로는 고정 크기 블록마다 (seed, tag, 블록 번호) 서브스트림을 사용하므로
    결과는 작업자 수와 무관하게 결정적입니다. 용도가 다른 경로 집합은 tag 로 구분합니다.

    Args:
        params: 시장 명세
        grid: 시점 격자
        n_paths: 경로 수 (>= 1)
        seed: 시드
        workers: 작업자 수
        tag: 서브스트림 네임스페이스

    Returns:
        np.ndarray: (n_paths, m+1, d) 가격 배열, path[:, 0] = spot
    """
    if n_paths < 1:
        raise DomainError(f"경로 수는 1 이상이어야 합니다: {n_paths}")
    d, m = params.d, grid.steps
    mean, cov = log_step_moments(params, grid.dt)
    chol = factor_covariance(cov)

    def run_block(block: tuple[int, int, int]) -> np.ndarray:
        index, start, stop = block
        rng = substream(seed, tag, index)
        shocks = rng.standard_normal((stop - start, m, d)) @ chol.T + mean
        logs = np.empty((stop - start, m + 1, d))
        logs[:, 0, :] = params.log_spot
        logs[:, 1:, :] = params.log_spot + np.cumsum(shocks, axis=1)
        paths = np.exp(logs)
        paths[:, 0, :] = params.spot_array
        return paths

    blocks = parallel_map(run_block, path_blocks(n_paths), workers)
    return np.concatenate(blocks, axis=0)


def discount_factors(r: float, grid: TimeGrid) -> np.ndarray:
    """시점별 할인 계수 e^{-r t}, t = 0..m"""
    return np.exp(-r * grid.maturity * np.arange(grid.steps + 1) / grid.steps)
