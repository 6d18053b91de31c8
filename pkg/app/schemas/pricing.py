"""
가격 계산 관련 Pydantic 스키마

격자 가격 엔진 설정/결과(PricerConfig, PriceResult), 상하한 추정(BoundsConfig, BoundsResult),
기준 가격 계산 설정(LsmcConfig, GeoReduction)을 정의합니다.
"""

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.market import MarketParams, PayoffSpec, TimeGrid
from app.schemas.mixture import FitConfig, FitReport, Surface


class Propagation(str, Enum):
    """연속 가치 계산 방식"""

    ANALYTIC = "analytic"
    CLUSTER = "cluster"


class DescendantScheme(str, Enum):
    """후손 점 추출 방식"""

    PSEUDO = "pseudo"
    ANTITHETIC = "antithetic"
    SOBOL = "sobol"


class PricerConfig(BaseModel):
    """격자 가격 엔진 설정"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    propagation: Propagation = Field(default=Propagation.CLUSTER, description="연속 가치 계산 방식")
    n_descendants: int = Field(default=256, ge=2, description="격자점당 후손 점 수")
    descendant_scheme: DescendantScheme = Field(default=DescendantScheme.ANTITHETIC, description="후손 점 추출 방식")
    fit: FitConfig = Field(default_factory=FitConfig, description="곡면 적합 설정")
    seed: int = Field(default=0, description="후손 점 시드")
    workers: int = Field(default=1, ge=1, description="작업자 수")


class PriceResult(BaseModel):
    """
    역방향 귀납 결과

    surfaces[t] 는 시점 t 의 연속 가치 곡면이며 t = 0..m-1 입니다.
    만기 시점 m 의 가치는 수익 그 자체입니다.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    value0: float = Field(..., description="(spot, t=0) 에서의 가격")
    surfaces: list[Surface] = Field(..., description="시점별 연속 가치 곡면")
    fit_reports: list[FitReport] = Field(..., description="시점별 적합 진단")
    timing: dict[str, float] = Field(default_factory=dict, description="단계별 소요 시간 (초)")
    market: MarketParams
    payoff: PayoffSpec
    time_grid: TimeGrid

    @model_validator(mode="after")
    def validate_slices(self) -> "PriceResult":
        """곡면 수가 단계 수와 같은지 검증"""
        if len(self.surfaces) != self.time_grid.steps or len(self.fit_reports) != self.time_grid.steps:
            raise ValueError("곡면/적합 진단 수는 단계 수 m 과 같아야 합니다.")
        return self


class BoundsConfig(BaseModel):
    """하한/상한 추정 설정"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_paths_lower: int = Field(default=20000, ge=1, description="하한 경로 수")
    n_paths_outer: int = Field(default=2000, ge=1, description="상한 외부 경로 수")
    n_inner: int = Field(default=64, ge=2, description="조건부 기대값 추정용 내부 표본 수")
    seed: int = Field(default=1, description="경로 시드")
    workers: int = Field(default=1, ge=1, description="작업자 수")


class BoundsResult(BaseModel):
    """하한/상한 추정 결과"""

    model_config = ConfigDict(frozen=True)

    v_lower: float
    se_lower: float = Field(..., ge=0)
    v_upper: float
    se_upper: float = Field(..., ge=0)
    mean_increment: float = Field(default=0.0, description="할인 마팅게일 증분 평균")
    se_increment: float = Field(default=0.0, ge=0, description="증분 평균의 표준오차")

    @property
    def gap(self) -> float:
        """v_upper - v_lower"""
        return self.v_upper - self.v_lower


class LsmcConfig(BaseModel):
    """최소제곱 몬테카를로 설정"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_paths: int = Field(default=100000, ge=1, description="경로 수")
    degree: int = Field(default=2, ge=1, description="가격 다항식 전체 차수 p")
    seed: int = Field(default=2, description="경로 시드")
    workers: int = Field(default=1, ge=1, description="작업자 수")


class GeoReduction(BaseModel):
    """기하 평균의 1차원 GBM 축약 파라미터"""

    model_config = ConfigDict(frozen=True)

    s0: float = Field(..., gt=0, description="G_0 = (Π spot_i)^{1/d}")
    sigma_g: float = Field(..., ge=0, description="유효 변동성")
    delta_g: float = Field(..., description="유효 배당률")
