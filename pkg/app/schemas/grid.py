"""
격자 관련 Pydantic 스키마

Sobol 설정과 로그 가격 공간의 준난수 격자(학습/검증 분할 포함)를 정의합니다.
"""

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

# scipy.stats.qmc.Sobol 방향수 테이블이 지원하는 최대 차원
MAX_SOBOL_DIMENSION = 21201


class SobolConfig(BaseModel):
    """Sobol 수열 설정"""

    model_config = ConfigDict(frozen=True)

    dimension: int = Field(..., ge=1, description="차원 d")
    skip: int = Field(default=1, ge=0, description="앞에서 버릴 점 개수 (기본 1: 원점 제외)")
    scramble_seed: Optional[int] = Field(default=None, description="스크램블 시드 (없으면 스크램블하지 않음)")


class Grid(BaseModel):
    """
    로그 가격 공간의 격자 G

    points = L·z + c 로 만들어지며, (center, factor) 변환을 함께 보관해 역변환이 가능합니다.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    points: np.ndarray = Field(..., description="n_g × d 로그 가격 좌표")
    train_idx: np.ndarray = Field(..., description="학습 인덱스")
    val_idx: np.ndarray = Field(..., description="검증 인덱스")
    center: Optional[np.ndarray] = Field(default=None, description="가우시안 변환 중심 c")
    factor: Optional[np.ndarray] = Field(default=None, description="가우시안 변환 인수 L")
    horizon: Optional[float] = Field(default=None, description="기준 시점 (년)")
    spread: Optional[float] = Field(default=None, description="확산 배수")

    @model_validator(mode="after")
    def validate_partition(self) -> "Grid":
        """분할이 서로소이고 전체를 덮는지, 점이 모두 유한한지 검증"""
        if self.points.ndim != 2:
            raise ValueError("points 는 2차원 배열이어야 합니다.")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("격자 점에 유한하지 않은 값이 있습니다.")
        n = self.points.shape[0]
        train = np.asarray(self.train_idx, dtype=np.int64)
        val = np.asarray(self.val_idx, dtype=np.int64)
        if np.intersect1d(train, val).size:
            raise ValueError("학습/검증 인덱스가 겹칩니다.")
        union = np.union1d(train, val)
        if union.size != n or train.size + val.size != n or (n and (union[0] != 0 or union[-1] != n - 1)):
            raise ValueError("학습/검증 인덱스의 합집합은 전체 격자여야 합니다.")
        return self

    @property
    def n_g(self) -> int:
        return int(self.points.shape[0])

    @property
    def d(self) -> int:
        return int(self.points.shape[1])
