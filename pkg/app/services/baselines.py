"""
독립 기준 가격 서비스

- 이변량 정규 CDF 와 Stulz 최소값 풋 해석 공식 (2자산 European)
- 단일 단계 European 몬테카를로 (antithetic 쌍)
- 최소제곱 몬테카를로 (American)
- 기하 평균의 1차원 축약과 이항 트리
"""

import math
from itertools import combinations_with_replacement
from typing import Optional

import numpy as np
from scipy.linalg import qr
from scipy.special import ndtr

from app.core.errors import ConfigurationError, DomainError
from app.core.streams import BLOCK_PATHS, StreamTag, parallel_map, path_blocks, substream
from app.schemas.market import MarketParams, PayoffKind, PayoffSpec, TimeGrid
from app.schemas.pricing import GeoReduction, LsmcConfig
from app.services.model import factor_covariance, log_step_moments, payoff, simulate_paths
from loguru import logger

# 변동성이 이보다 작으면 결정적 경로로 취급
_DETERMINISTIC_VOL = 1e-12

# Gauss-Legendre 절점/가중치 (3, 6, 10 점, 양수 쪽 대칭 절반)
_GL_NODES = (
    (-0.9324695142031522, -0.6612093864662647, -0.2386191860831970),
    (
        -0.9815606342467191,
        -0.9041172563704750,
        -0.7699026741943050,
        -0.5873179542866171,
        -0.3678314989981802,
        -0.1252334085114692,
    ),
    (
        -0.9931285991850949,
        -0.9639719272779138,
        -0.9122344282513259,
        -0.8391169718222188,
        -0.7463319064601508,
        -0.6360536807265150,
        -0.5108670019508271,
        -0.3737060887154196,
        -0.2277858511416451,
        -0.07652652113349733,
    ),
)
_GL_WEIGHTS = (
    (0.1713244923791705, 0.3607615730481384, 0.4679139345726904),
    (
        0.04717533638651177,
        0.1069393259953183,
        0.1600783285433464,
        0.2031674267230659,
        0.2334925365383547,
        0.2491470458134029,
    ),
    (
        0.01761400713915212,
        0.04060142980038694,
        0.06267204833410906,
        0.08327674157670475,
        0.1019301198172404,
        0.1181945319615184,
        0.1316886384491766,
        0.1420961093183821,
        0.1491729864726037,
        0.1527533871307259,
    ),
)


def bivariate_normal_cdf(a: float, b: float, rho: float) -> float:
    """
    표준 이변량 정규 CDF P(Z1 <= a, Z2 <= b), 상관계수 rho

    Drezner-Wesolowsky 계열의 Genz 알고리즘 (Gauss-Legendre 구적, 절대 오차 약 1e-15).

    Raises:
        DomainError: |rho| > 1
    """
    if not abs(rho) <= 1.0:
        raise DomainError(f"상관계수는 [-1, 1] 안에 있어야 합니다: {rho}")
    if a == -math.inf or b == -math.inf:
        return 0.0
    if a == math.inf:
        return float(ndtr(b))
    if b == math.inf:
        return float(ndtr(a))

    if abs(rho) < 0.3:
        level = 0
    elif abs(rho) < 0.75:
        level = 1
    else:
        level = 2
    nodes, weights = _GL_NODES[level], _GL_WEIGHTS[level]
    two_pi = 2.0 * math.pi

    h, k = -a, -b
    hk = h * k
    bvn = 0.0
    if abs(rho) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(rho)
        for x, w in zip(nodes, weights):
            for sign in (1.0, -1.0):
                sn = math.sin(asr * (sign * x + 1.0) / 2.0)
                bvn += w * math.exp((sn * hk - hs) / (1.0 - sn * sn))
        return bvn * asr / (2.0 * two_pi) + float(ndtr(-h) * ndtr(-k))

    if rho < 0:
        k = -k
        hk = -hk
    if abs(rho) < 1.0:
        as_ = (1.0 - rho) * (1.0 + rho)
        a_ = math.sqrt(as_)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 16.0
        bvn = a_ * math.exp(-(bs / as_ + hk) / 2.0) * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0)
        if hk > -160.0:
            b_ = math.sqrt(bs)
            bvn -= math.exp(-hk / 2.0) * math.sqrt(two_pi) * float(ndtr(-b_ / a_)) * b_ * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
        a_ /= 2.0
        for x, w in zip(nodes, weights):
            xs = (a_ * (x + 1.0)) ** 2
            rs = math.sqrt(1.0 - xs)
            bvn += a_ * w * (math.exp(-bs / (2.0 * xs) - hk / (1.0 + rs)) / rs - math.exp(-(bs / xs + hk) / 2.0) * (1.0 + c * xs * (1.0 + d * xs)))
            xs = as_ * (-x + 1.0) ** 2 / 4.0
            rs = math.sqrt(1.0 - xs)
            bvn += a_ * w * math.exp(-(bs / xs + hk) / 2.0) * (math.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs - (1.0 + c * xs * (1.0 + d * xs)))
        bvn = -bvn / two_pi
    if rho > 0:
        bvn += float(ndtr(-max(h, k)))
    else:
        bvn = -bvn + max(0.0, float(ndtr(-h) - ndtr(-k)))
    return min(max(bvn, 0.0), 1.0)


def black_scholes_put(spot: float, strike: float, r: float, vol: float, maturity: float, dividend: float = 0.0) -> float:
    """단일 자산 European 풋 (변동성이 0 이면 결정적 값)"""
    forward = spot * math.exp((r - dividend) * maturity)
    disc = math.exp(-r * maturity)
    sd = vol * math.sqrt(maturity)
    if sd < _DETERMINISTIC_VOL:
        return disc * max(strike - forward, 0.0)
    if strike <= 0:
        return 0.0
    d1 = (math.log(forward / strike) + 0.5 * sd * sd) / sd
    return disc * (strike * float(ndtr(-(d1 - sd))) - forward * float(ndtr(-d1)))


def _call_on_min(s1: float, s2: float, strike: float, r: float, v1: float, v2: float, rho: float, maturity: float) -> float:
    """두 자산 최소값에 대한 European 콜 (Stulz)"""
    sq = math.sqrt(maturity)
    sigma = math.sqrt(max(v1 * v1 + v2 * v2 - 2.0 * rho * v1 * v2, 0.0))
    d = (math.log(s1 / s2) + 0.5 * sigma * sigma * maturity) / (sigma * sq)
    if strike <= 0:
        # min(S1, S2) 의 현재 가치
        return s1 * float(ndtr(-d)) + s2 * float(ndtr(d - sigma * sq))
    v1 = max(v1, _DETERMINISTIC_VOL)
    v2 = max(v2, _DETERMINISTIC_VOL)
    y1 = (math.log(s1 / strike) + (r + 0.5 * v1 * v1) * maturity) / (v1 * sq)
    y2 = (math.log(s2 / strike) + (r + 0.5 * v2 * v2) * maturity) / (v2 * sq)
    rho1 = min(max((v1 - rho * v2) / sigma, -1.0), 1.0)
    rho2 = min(max((v2 - rho * v1) / sigma, -1.0), 1.0)
    return (
        s1 * bivariate_normal_cdf(y1, -d, -rho1)
        + s2 * bivariate_normal_cdf(y2, d - sigma * sq, -rho2)
        - strike * math.exp(-r * maturity) * bivariate_normal_cdf(y1 - v1 * sq, y2 - v2 * sq, rho)
    )


def stulz_european_min_put(params: MarketParams, strike: float, maturity: float) -> float:
    """
    두 자산 최소값 European 풋의 해석 가격

    최소값 콜 두 개와 패리티로 계산합니다: P = e^{-rT}K - C_min(0) + C_min(K).

    Args:
        params: 2자산 시장 명세
        strike: 행사가 K (> 0)
        maturity: 만기 T (> 0)

    Raises:
        DomainError: d != 2 이거나 K, T 가 양수가 아닌 경우
    """
    if params.d != 2:
        raise DomainError(f"Stulz 공식은 2자산 전용입니다: d={params.d}")
    if not strike > 0 or not maturity > 0:
        raise DomainError("행사가와 만기는 양수여야 합니다.")
    cov = params.cov
    s1, s2 = params.spot
    v1, v2 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    r = params.r
    spread_var = cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1]

    if math.sqrt(max(spread_var, 0.0) * maturity) < _DETERMINISTIC_VOL:
        # 두 자산 비율이 고정: 최소값은 spot 이 작은 자산 하나의 GBM
        low = int(np.argmin(params.spot))
        return black_scholes_put(params.spot[low], strike, r, math.sqrt(cov[low, low]), maturity)

    rho = cov[0, 1] / (v1 * v2) if v1 > 0 and v2 > 0 else 0.0
    rho = min(max(rho, -1.0), 1.0)
    c_zero = _call_on_min(s1, s2, 0.0, r, v1, v2, rho, maturity)
    c_strike = _call_on_min(s1, s2, strike, r, v1, v2, rho, maturity)
    return max(math.exp(-r * maturity) * strike - c_zero + c_strike, 0.0)


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    """표본 평균과 표준오차 (모든 값이 같으면 se = 0)"""
    mean = float(np.mean(values))
    if values.shape[0] < 2 or np.ptp(values) == 0.0:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / np.sqrt(values.shape[0]))


def european_mc(
    params: MarketParams,
    spec: PayoffSpec,
    maturity: float,
    n_paths: int,
    seed: int,
    workers: int = 1,
) -> tuple[float, float]:
    """
    단일 단계 정확 GBM European 몬테카를로

    antithetic 쌍 평균을 표본 단위로 쓰며, 쌍은 고정 블록마다 (seed, 블록) 서브스트림에서 뽑습니다.

    Returns:
        (price, se)
    """
    if n_paths < 100:
        raise DomainError(f"경로 수는 100 이상이어야 합니다: {n_paths}")
    mean, cov = log_step_moments(params, maturity)
    factor = factor_covariance(cov)
    n_pairs = (n_paths + 1) // 2

    def run_block(block: tuple[int, int, int]) -> np.ndarray:
        index, start, stop = block
        z = substream(seed, StreamTag.MC, index).standard_normal((stop - start, params.d))
        shock = z @ factor.T
        up = payoff(spec, np.exp(params.log_spot + mean + shock))
        down = payoff(spec, np.exp(params.log_spot + mean - shock))
        return 0.5 * (np.asarray(up) + np.asarray(down))

    pairs = np.concatenate(parallel_map(run_block, path_blocks(n_pairs, BLOCK_PATHS), workers))
    price, se = _mean_and_se(math.exp(-params.r * maturity) * pairs)
    return price, se


def monomial_exponents(d: int, degree: int) -> list[tuple[int, ...]]:
    """전체 차수 <= degree 인 단항식 지수 목록 (상수항 포함)"""
    exponents = []
    for total in range(degree + 1):
        for combo in combinations_with_replacement(range(d), total):
            exps = [0] * d
            for i in combo:
                exps[i] += 1
            exponents.append(tuple(exps))
    return exponents


def lsmc_basis_size(d: int, degree: int) -> int:
    """단항식 수 + 수익 열"""
    return math.comb(d + degree, degree) + 1


def _regress(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """피벗 QR 로 공선 열을 버리고 최소제곱 적합값 반환"""
    _, r_mat, piv = qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_mat))
    tol = diag[0] * max(x.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < x.shape[1]:
        logger.warning(f"회귀 행렬 계수 부족: {x.shape[1]} 열 중 {rank} 열 사용")
    cols = piv[:rank]
    coef, *_ = np.linalg.lstsq(x[:, cols], y, rcond=None)
    return x[:, cols] @ coef


def lsmc_american(
    params: MarketParams,
    spec: PayoffSpec,
    tg: TimeGrid,
    cfg: Optional[LsmcConfig] = None,
) -> tuple[float, float]:
    """
    최소제곱 몬테카를로 American 가격

    내가격 경로에서 할인 연속 현금흐름을 가격 다항식(S/K 척도, 전체 차수 p)과 수익 열에 회귀하고,
    수익이 추정 연속 가치 이상이면 행사합니다. t=0 은 max(π(spot), 평균 현금흐름) 입니다.

    Returns:
        (price, se_in_sample)

    Raises:
        ConfigurationError: n_paths < 10 × 기저 크기
    """
    cfg = cfg or LsmcConfig()
    d, m = params.d, tg.steps
    size = lsmc_basis_size(d, cfg.degree)
    if cfg.n_paths < 10 * size:
        raise ConfigurationError(f"경로 수는 기저 크기의 10배({10 * size}) 이상이어야 합니다: {cfg.n_paths}", path="lsmc.n_paths")

    paths = simulate_paths(params, tg, cfg.n_paths, cfg.seed, cfg.workers, tag=StreamTag.LSMC)
    scale = spec.strike if spec.strike > 0 else float(np.mean(params.spot_array))
    exponents = np.array(monomial_exponents(d, cfg.degree))
    step_disc = math.exp(-params.r * tg.dt)

    cash = np.asarray(payoff(spec, paths[:, m]), dtype=float)
    if spec.american:
        for t in range(m - 1, 0, -1):
            cash *= step_disc
            intrinsic = np.asarray(payoff(spec, paths[:, t]), dtype=float)
            itm = intrinsic > 0
            if np.count_nonzero(itm) <= size:
                continue
            s = paths[itm, t] / scale
            basis = np.prod(s[:, None, :] ** exponents[None, :, :], axis=2)
            x = np.column_stack([basis, intrinsic[itm] / scale])
            fitted = _regress(x, cash[itm])
            exercise = intrinsic[itm] >= fitted
            idx = np.flatnonzero(itm)[exercise]
            cash[idx] = intrinsic[idx]
    else:
        cash *= step_disc ** (m - 1)
    cash *= step_disc

    price, se = _mean_and_se(cash)
    if spec.american:
        immediate = float(payoff(spec, params.spot_array))
        if immediate >= price:
            return immediate, 0.0
    return price, se


def geo_reduce(params: MarketParams, spec: PayoffSpec) -> GeoReduction:
    """
    기하 평균 G = (Π S_i)^{1/d} 의 1차원 GBM 축약

    sigma_g² = Σ_ij sigma_ij / d², delta_g = Σ_i sigma_ii / (2d) - sigma_g² / 2

    Raises:
        DomainError: 기하 평균 수익이 아닌 경우
    """
    if not spec.kind.is_geometric:
        raise DomainError(f"기하 평균 수익만 축약할 수 있습니다: {spec.kind.value}")
    d = params.d
    cov = params.cov
    var_g = float(cov.sum()) / d**2
    delta_g = float(np.trace(cov)) / (2 * d) - 0.5 * var_g
    s0 = float(np.exp(params.log_spot.mean()))
    return GeoReduction(s0=s0, sigma_g=math.sqrt(max(var_g, 0.0)), delta_g=delta_g)


def binomial_american_1d(
    s0: float,
    sigma_g: float,
    delta_g: float,
    r: float,
    strike: float,
    maturity: float,
    steps: int,
    kind: PayoffKind,
    american: bool = True,
) -> float:
    """
    배당률 보정 재결합 이항 트리

    u, d = exp(ν·dt ± σ·√dt), ν = r - δ - σ²/2, p = (e^{(r-δ)dt} - d) / (u - d).
    변동성이 0 이면 결정적 선도 경로에서 최적 행사 시점을 고릅니다.

    Args:
        s0: 초기 가격
        sigma_g: 변동성
        delta_g: 배당률
        r: 무위험 이자율
        strike: 행사가
        maturity: 만기
        steps: 단계 수 (>= 1)
        kind: 풋/콜 판별용 수익 종류
        american: 조기 행사 허용 여부
    """
    if steps < 1:
        raise DomainError(f"단계 수는 1 이상이어야 합니다: {steps}")
    dt = maturity / steps
    sign = 1.0 if kind.is_put else -1.0

    def intrinsic(s: np.ndarray) -> np.ndarray:
        return np.maximum(sign * (strike - s), 0.0)

    if sigma_g * math.sqrt(dt) < _DETERMINISTIC_VOL:
        times = np.arange(steps + 1) * dt
        values = np.exp(-r * times) * intrinsic(s0 * np.exp((r - delta_g) * times))
        return float(values.max() if american else values[-1])

    nu = r - delta_g - 0.5 * sigma_g**2
    up = math.exp(nu * dt + sigma_g * math.sqrt(dt))
    down = math.exp(nu * dt - sigma_g * math.sqrt(dt))
    p = (math.exp((r - delta_g) * dt) - down) / (up - down)
    disc = math.exp(-r * dt)

    j = np.arange(steps + 1)
    values = intrinsic(s0 * up**j * down ** (steps - j))
    for k in range(steps - 1, -1, -1):
        values = disc * (p * values[1 : k + 2] + (1.0 - p) * values[: k + 1])
        if american:
            j = np.arange(k + 1)
            values = np.maximum(values, intrinsic(s0 * up**j * down ** (k - j)))
    return float(values[0])


def converged_binomial(reduction: GeoReduction, r: float, spec: PayoffSpec, maturity: float, steps: int = 2000) -> float:
    """steps 와 steps+1 트리 가격의 평균 (홀짝 진동 제거)"""
    args = (reduction.s0, reduction.sigma_g, reduction.delta_g, r, spec.strike, maturity)
    return 0.5 * (
        binomial_american_1d(*args, steps, spec.kind, spec.american)
        + binomial_american_1d(*args, steps + 1, spec.kind, spec.american)
    )
