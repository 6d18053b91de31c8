"""
격자 생성 서비스

Sobol 저불일치 수열을 가우시안 변환으로 로그 가격 공간에 옮겨 격자 G 를 만들고,
교차 검증을 위해 학습/검증 집합으로 분할합니다. CSV 내보내기/불러오기를 함께 제공합니다.
"""

import json
import warnings
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from app.core.errors import ConfigurationError, DomainError
from app.core.streams import StreamTag, substream
from app.schemas.grid import MAX_SOBOL_DIMENSION, Grid, SobolConfig
from app.schemas.market import MarketParams
from app.services.model import factor_covariance
from loguru import logger


def sobol_sequence(cfg: SobolConfig, n: int) -> np.ndarray:
    """
    Sobol 수열 생성

    Args:
        cfg: Sobol 설정 (차원, 건너뛸 점 수, 스크램블 시드)
        n: 점 개수 (>= 1)

    Returns:
        np.ndarray: [0,1)^d 안의 n × d 행렬

    Raises:
        ConfigurationError: 방향수 테이블이 지원하지 않는 차원
    """
    if cfg.dimension > MAX_SOBOL_DIMENSION:
        raise ConfigurationError(
            f"Sobol 차원 {cfg.dimension} 은 지원 범위({MAX_SOBOL_DIMENSION})를 넘습니다.",
            path="grid.dimension",
        )
    if n < 1:
        raise DomainError(f"점 개수는 1 이상이어야 합니다: {n}")

    scramble = cfg.scramble_seed is not None
    sampler = qmc.Sobol(d=cfg.dimension, scramble=scramble, seed=cfg.scramble_seed)
    with warnings.catch_warnings():
        # 2의 거듭제곱이 아닌 n 에 대한 균형성 경고는 무시
        warnings.simplefilter("ignore", UserWarning)
        if cfg.skip:
            sampler.fast_forward(cfg.skip)
        return sampler.random(n)


def inverse_normal_cdf(u: np.ndarray | float) -> np.ndarray | float:
    """
    표준 정규 분위수 Φ⁻¹(u)

    Raises:
        DomainError: u 가 (0, 1) 밖인 경우
    """
    arr = np.asarray(u, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise DomainError("확률 u 는 (0, 1) 안에 있어야 합니다.")
    z = ndtri(arr)
    return float(z) if np.ndim(z) == 0 else z


def build_grid(
    params: MarketParams,
    grid_horizon: float,
    spread: float,
    n: int,
    cfg: SobolConfig,
) -> Grid:
    """
    가우시안 변환 Sobol 격자 생성

    points = L·z + c, c = log(spot) + (r - diag(sigma)/2)·horizon, L·Lᵀ = spread²·sigma·horizon.
    생성 직후에는 모든 점이 학습 집합에 속합니다 (split 으로 분할).

    Args:
        params: 시장 명세
        grid_horizon: 기준 시점 (년)
        spread: 확산 배수
        n: 점 개수 (>= d+2)
        cfg: Sobol 설정

    Returns:
        Grid: 로그 가격 격자
    """
    d = params.d
    if n < d + 2:
        raise DomainError(f"격자 점 개수는 d+2 = {d + 2} 이상이어야 합니다: {n}")
    if not grid_horizon > 0 or not spread > 0:
        raise DomainError("grid_horizon 과 spread 는 양수여야 합니다.")
    if cfg.dimension != d:
        cfg = cfg.model_copy(update={"dimension": d})

    z = ndtri(sobol_sequence(cfg, n))
    center = params.log_spot + (params.r - 0.5 * np.diag(params.cov)) * grid_horizon
    factor = factor_covariance(spread**2 * params.cov * grid_horizon)
    points = center + z @ factor.T

    logger.debug(f"격자 생성됨: n={n}, d={d}, horizon={grid_horizon}, spread={spread}")
    return Grid(
        points=points,
        train_idx=np.arange(n),
        val_idx=np.arange(0),
        center=center,
        factor=factor,
        horizon=grid_horizon,
        spread=spread,
    )


def grid_to_unit(grid: Grid) -> np.ndarray:
    """격자 점을 L⁻¹ 과 Φ 로 되돌려 단위 입방체 좌표를 복원"""
    if grid.center is None or grid.factor is None:
        raise DomainError("변환 정보가 없는 격자는 역변환할 수 없습니다.")
    z, *_ = np.linalg.lstsq(grid.factor, (grid.points - grid.center).T, rcond=None)
    return ndtr(z.T)


def split(grid: Grid, val_fraction: float, seed: int) -> Grid:
    """
    학습/검증 무작위 분할

    |val_idx| = round(val_fraction·n_g) (파이썬 round: 짝수 쪽 반올림).

    Args:
        grid: 격자
        val_fraction: 검증 비율 (0, 1)
        seed: 시드

    Returns:
        Grid: 분할이 채워진 새 격자
    """
    if not 0.0 < val_fraction < 1.0:
        raise DomainError(f"val_fraction 은 (0, 1) 안에 있어야 합니다: {val_fraction}")
    n = grid.n_g
    n_val = int(round(val_fraction * n))
    perm = substream(seed, StreamTag.SPLIT).permutation(n)
    return Grid(
        points=grid.points,
        train_idx=np.sort(perm[n_val:]),
        val_idx=np.sort(perm[:n_val]),
        center=grid.center,
        factor=grid.factor,
        horizon=grid.horizon,
        spread=grid.spread,
    )


def export_grid_csv(grid: Grid, path: str | Path) -> Path:
    """
    격자를 CSV 로 저장

    첫 줄은 JSON 메타데이터 주석, 둘째 줄은 열 이름, 이후 한 점당 한 줄(d 열)입니다.
    """
    path = Path(path)
    meta = {
        "d": grid.d,
        "n": grid.n_g,
        "horizon": grid.horizon,
        "spread": grid.spread,
        "center": None if grid.center is None else grid.center.tolist(),
        "factor": None if grid.factor is None else grid.factor.tolist(),
        "val_idx": grid.val_idx.tolist(),
    }
    columns = ",".join(f"x{i}" for i in range(grid.d))
    header = f"# {json.dumps(meta)}\n{columns}"
    np.savetxt(path, grid.points, fmt="%.17g", delimiter=",", header=header, comments="")
    return path


def load_grid_csv(path: str | Path) -> Grid:
    """export_grid_csv 로 저장한 격자를 불러오기"""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
    if not first.startswith("#"):
        raise DomainError(f"격자 CSV 메타데이터 주석이 없습니다: {path}")
    meta = json.loads(first[1:].strip())
    points = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    val_idx = np.asarray(meta.get("val_idx", []), dtype=np.int64)
    train_idx = np.setdiff1d(np.arange(points.shape[0]), val_idx)
    return Grid(
        points=points,
        train_idx=train_idx,
        val_idx=val_idx,
        center=None if meta.get("center") is None else np.asarray(meta["center"]),
        factor=None if meta.get("factor") is None else np.asarray(meta["factor"]),
        horizon=meta.get("horizon"),
        spread=meta.get("spread"),
    )
