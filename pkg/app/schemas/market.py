"""
시장/상품 관련 Pydantic 스키마

위험중립 다자산 기하 브라운 운동(MarketParams), 레인보우 수익 구조(PayoffSpec),
행사 시점 격자(TimeGrid)를 정의합니다. 모든 모델은 생성 후 불변입니다.
"""

from enum import Enum
from functools import cached_property
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# 반정치 판정 허용 오차 (최대 고유값 대비)
PSD_RELATIVE_TOLERANCE = 1e-10


class PayoffKind(str, Enum):
    """레인보우 수익 구조 종류"""

    MIN_PUT = "min_put"
    MAX_PUT = "max_put"
    MIN_CALL = "min_call"
    MAX_CALL = "max_call"
    GEO_MEAN_PUT = "geo_mean_put"
    GEO_MEAN_CALL = "geo_mean_call"
    ARITH_MEAN_PUT = "arith_mean_put"
    ARITH_MEAN_CALL = "arith_mean_call"

    @property
    def is_put(self) -> bool:
        return self.value.endswith("_put")

    @property
    def is_geometric(self) -> bool:
        return self in (PayoffKind.GEO_MEAN_PUT, PayoffKind.GEO_MEAN_CALL)


class ExerciseStyle(str, Enum):
    """행사 방식"""

    AMERICAN = "american"
    EUROPEAN = "european"


def check_psd(matrix: np.ndarray) -> bool:
    """대칭 행렬의 반정치 여부 (상대 허용 오차 적용)"""
    eig = np.linalg.eigvalsh(matrix)
    scale = max(float(np.max(np.abs(eig))), 0.0)
    return bool(eig.min() >= -PSD_RELATIVE_TOLERANCE * scale)


class MarketParams(BaseModel):
    """
    위험중립 다자산 GBM 명세

    sigma 는 연율화된 로그 수익률의 공분산 행렬이며, 저장된 값 그대로 대칭이어야 합니다.
    """

    model_config = ConfigDict(frozen=True)

    r: float = Field(..., description="무위험 이자율 (연속 복리, 연율)")
    sigma: list[list[float]] = Field(..., description="로그 수익률 공분산 행렬 (d×d)")
    spot: list[float] = Field(..., min_length=1, description="초기 자산 가격 (d)")

    @field_validator("spot")
    @classmethod
    def validate_spot(cls, v: list[float]) -> list[float]:
        """초기 가격은 모두 양수"""
        if any(not np.isfinite(s) or s <= 0 for s in v):
            raise ValueError("초기 가격(spot)은 모두 양수여야 합니다.")
        return v

    @model_validator(mode="after")
    def validate_covariance(self) -> "MarketParams":
        """공분산 행렬의 모양, 대칭성, 반정치성 검증"""
        d = len(self.spot)
        if len(self.sigma) != d or any(len(row) != d for row in self.sigma):
            raise ValueError(f"공분산 행렬(sigma)은 {d}×{d} 이어야 합니다.")
        cov = np.asarray(self.sigma, dtype=float)
        if not np.all(np.isfinite(cov)):
            raise ValueError("공분산 행렬(sigma)에 유한하지 않은 값이 있습니다.")
        if not np.array_equal(cov, cov.T):
            raise ValueError("공분산 행렬(sigma)은 대칭이어야 합니다.")
        if not check_psd(cov):
            raise ValueError("공분산 행렬(sigma)은 반정치(PSD)여야 합니다.")
        return self

    @property
    def d(self) -> int:
        """자산 수"""
        return len(self.spot)

    @cached_property
    def cov(self) -> np.ndarray:
        cov = np.asarray(self.sigma, dtype=float)
        cov.setflags(write=False)
        return cov

    @cached_property
    def spot_array(self) -> np.ndarray:
        spot = np.asarray(self.spot, dtype=float)
        spot.setflags(write=False)
        return spot

    @cached_property
    def log_spot(self) -> np.ndarray:
        log_spot = np.log(self.spot_array)
        log_spot.setflags(write=False)
        return log_spot

    @classmethod
    def from_vols(
        cls,
        r: float,
        vols: list[float],
        spot: list[float],
        correlation: Optional[list[list[float]]] = None,
    ) -> "MarketParams":
        """
        변동성 + 상관계수 행렬로부터 생성 (공분산 = D·C·D, D = diag(vols))

        Args:
            r: 무위험 이자율
            vols: 연율 변동성
            spot: 초기 가격
            correlation: 상관계수 행렬 (없으면 단위 행렬)

        Returns:
            MarketParams: 공분산 형태로 변환된 시장 명세
        """
        vol = np.asarray(vols, dtype=float)
        corr = np.eye(len(vols)) if correlation is None else np.asarray(correlation, dtype=float)
        cov = vol[:, None] * corr * vol[None, :]
        # 부동소수 연산 순서 차이로 생기는 비대칭 제거
        cov = 0.5 * (cov + cov.T)
        return cls(r=r, sigma=cov.tolist(), spot=list(spot))


class PayoffSpec(BaseModel):
    """
    레인보우 옵션 수익 구조

    수익은 항상 max(f(K, S), 0) 형태로 0 이상입니다.
    """

    model_config = ConfigDict(frozen=True)

    kind: PayoffKind = Field(..., description="수익 구조 종류")
    strike: float = Field(..., ge=0, description="행사가 K")
    style: ExerciseStyle = Field(default=ExerciseStyle.AMERICAN, description="행사 방식")

    @property
    def american(self) -> bool:
        return self.style == ExerciseStyle.AMERICAN


class TimeGrid(BaseModel):
    """행사 가능 시점 격자 (만기 T, 단계 수 m)"""

    model_config = ConfigDict(frozen=True)

    maturity: float = Field(..., gt=0, description="만기 (년)")
    steps: int = Field(..., ge=1, description="단계 수 m")

    @property
    def dt(self) -> float:
        """단계 간격 Δt = T/m"""
        return self.maturity / self.steps

    def time_of(self, slice_index: int) -> float:
        """시점 인덱스 → 시간 (년)"""
        return self.maturity * slice_index / self.steps
