"""
작업(Job) 설정 및 보고서 스키마

설정 파일(TOML) 한 개가 RunConfig 하나에 대응합니다. 모든 섹션은 알 수 없는 키를 거부합니다.
"""

from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.config import get_settings
from app.schemas.market import ExerciseStyle, MarketParams, PayoffKind, PayoffSpec, TimeGrid
from app.schemas.mixture import FitConfig
from app.schemas.pricing import BoundsConfig, DescendantScheme, LsmcConfig, PricerConfig, Propagation

# CSV 머리말 버전 (열 구성이 바뀌면 올림)
CSV_SCHEMA_VERSION = 1


class JobKind(str, Enum):
    """실행할 작업 종류"""

    PRICE = "price"
    BOUNDS = "bounds"
    BENCHMARK = "benchmark"
    RATE_CHECK = "rate-check"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MarketSection(_Section):
    """
    시장 섹션

    vols(+ correlation) 또는 covariance 중 하나만 지정합니다.
    """

    spots: list[float] = Field(..., min_length=1, description="초기 가격")
    rate: float = Field(..., description="무위험 이자율")
    vols: Optional[list[float]] = Field(default=None, description="연율 변동성")
    correlation: Optional[list[list[float]]] = Field(default=None, description="상관계수 행렬")
    covariance: Optional[list[list[float]]] = Field(default=None, description="공분산 행렬")

    @field_validator("vols")
    @classmethod
    def validate_vols(cls, v: Optional[list[float]]) -> Optional[list[float]]:
        if v is not None and any(not np.isfinite(x) or x < 0 for x in v):
            raise ValueError("변동성은 0 이상의 유한한 값이어야 합니다.")
        return v

    @field_validator("correlation")
    @classmethod
    def validate_correlation(cls, v: Optional[list[list[float]]]) -> Optional[list[list[float]]]:
        """원소는 [-1, 1], 대각은 1, 대칭"""
        if v is None:
            return v
        n = len(v)
        for i, row in enumerate(v):
            if len(row) != n:
                raise ValueError(f"{n}×{n} 정사각 행렬이어야 합니다 (행 {i}).")
            for j, x in enumerate(row):
                if not -1.0 <= x <= 1.0:
                    raise ValueError(f"원소 ({i}, {j}) 의 값 {x} 는 [-1, 1] 밖입니다.")
                if i == j and x != 1.0:
                    raise ValueError(f"대각 원소 ({i}, {i}) 는 1 이어야 합니다.")
                if v[j][i] != x:
                    raise ValueError(f"원소 ({i}, {j}) 와 ({j}, {i}) 가 다릅니다.")
        return v

    @model_validator(mode="after")
    def validate_form(self) -> "MarketSection":
        """두 입력 형식 중 정확히 하나, 차원 일치"""
        d = len(self.spots)
        if (self.vols is None) == (self.covariance is None):
            raise ValueError("vols 와 covariance 중 정확히 하나를 지정해야 합니다.")
        if self.covariance is not None and self.correlation is not None:
            raise ValueError("correlation 은 vols 와 함께만 쓸 수 있습니다.")
        if self.vols is not None and len(self.vols) != d:
            raise ValueError(f"vols 길이 {len(self.vols)} 가 spots 길이 {d} 와 다릅니다.")
        if self.correlation is not None and len(self.correlation) != d:
            raise ValueError(f"correlation 크기가 {d}×{d} 가 아닙니다.")
        return self

    def to_params(self) -> MarketParams:
        """MarketParams 로 변환 (vols 형식이면 D·C·D)"""
        if self.covariance is not None:
            return MarketParams(r=self.rate, sigma=self.covariance, spot=self.spots)
        return MarketParams.from_vols(self.rate, self.vols, self.spots, self.correlation)


class PayoffSection(_Section):
    kind: PayoffKind
    strike: float = Field(..., ge=0)
    style: ExerciseStyle = ExerciseStyle.AMERICAN

    def to_spec(self) -> PayoffSpec:
        return PayoffSpec(kind=self.kind, strike=self.strike, style=self.style)


class TimeSection(_Section):
    maturity: float = Field(..., gt=0)
    steps: int = Field(..., ge=1)

    def to_grid(self) -> TimeGrid:
        return TimeGrid(maturity=self.maturity, steps=self.steps)


class GridSection(_Section):
    """격자 섹션 (horizon 이 없으면 만기 사용)"""

    n_points: int = Field(default=4096, ge=1)
    spread: float = Field(default=1.5, gt=0)
    horizon: Optional[float] = Field(default=None, gt=0)
    sobol_skip: int = Field(default=1, ge=1, description="Sobol 수열 앞에서 버릴 점 수 (원점 제외)")
    scramble_seed: Optional[int] = None
    val_fraction: float = Field(default=0.2, gt=0, lt=1)
    target_val_rms: Optional[float] = Field(default=None, gt=0)
    max_points: Optional[int] = Field(default=None, ge=1)


class PricerSection(_Section):
    propagation: Propagation = Propagation.CLUSTER
    n_descendants: int = Field(default=256, ge=2)
    descendant_scheme: DescendantScheme = DescendantScheme.ANTITHETIC


class BoundsSection(_Section):
    n_paths_lower: int = Field(default=20000, ge=1)
    n_paths_outer: int = Field(default=2000, ge=1)
    n_inner: int = Field(default=64, ge=2)


class LsmcSection(_Section):
    n_paths: int = Field(default=100000, ge=1)
    degree: int = Field(default=2, ge=1)


class BenchmarkSection(_Section):
    mc_paths: int = Field(default=1_000_000, ge=100)
    binomial_steps: int = Field(default=2000, ge=1)


class RateCheckSection(_Section):
    """합성 목표 수렴률 점검 섹션"""

    n_targets: int = Field(default=20, ge=1)
    max_terms: int = Field(default=100, ge=1)
    dims: list[int] = Field(default_factory=lambda: [1, 2, 3], min_length=1)
    k_min: float = Field(default=1.0, gt=0)
    k_max: float = Field(default=5.0, gt=0)
    n_components: int = Field(default=5, ge=1)
    exact_dictionary: bool = True
    alpha: float = Field(default=0.5, gt=0, lt=1)
    epsilon: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def validate_range(self) -> "RateCheckSection":
        if self.k_min > self.k_max:
            raise ValueError("k_min 은 k_max 이하여야 합니다.")
        if any(d < 1 for d in self.dims):
            raise ValueError("dims 의 원소는 1 이상이어야 합니다.")
        return self


class RunConfig(_Section):
    """
    작업 설정 전체

    rate-check 가 아닌 작업은 market, payoff, time 섹션이 필요합니다.
    """

    job: JobKind = JobKind.PRICE
    seed: int = Field(default_factory=lambda: get_settings().default_seed)
    workers: int = Field(default_factory=lambda: get_settings().default_workers, ge=1)
    out: Optional[str] = Field(default_factory=lambda: get_settings().output_dir)

    market: Optional[MarketSection] = None
    payoff: Optional[PayoffSection] = None
    time: Optional[TimeSection] = None
    grid: GridSection = Field(default_factory=GridSection)
    fit: FitConfig = Field(default_factory=FitConfig)
    pricer: PricerSection = Field(default_factory=PricerSection)
    bounds: BoundsSection = Field(default_factory=BoundsSection)
    lsmc: LsmcSection = Field(default_factory=LsmcSection)
    benchmark: BenchmarkSection = Field(default_factory=BenchmarkSection)
    rate_check: RateCheckSection = Field(default_factory=RateCheckSection)

    @model_validator(mode="after")
    def validate_job(self) -> "RunConfig":
        """작업별 필수 섹션, 시장 명세 유효성, 격자 최소 크기"""
        if self.job == JobKind.RATE_CHECK:
            return self
        for name in ("market", "payoff", "time"):
            if getattr(self, name) is None:
                raise ValueError(f"{name}: {self.job.value} 작업에는 필수 섹션입니다.")
        try:
            params = self.market.to_params()
        except ValidationError as e:
            field = "market.covariance" if self.market.covariance is not None else "market.correlation"
            message = str(e.errors()[0]["msg"]).removeprefix("Value error, ")
            raise ValueError(f"{field}: {message}") from e
        if self.grid.n_points < params.d + 2:
            raise ValueError(f"grid.n_points: 격자 점 개수는 d+2 = {params.d + 2} 이상이어야 합니다 ({self.grid.n_points}).")
        if self.grid.max_points is not None and self.grid.max_points < self.grid.n_points:
            raise ValueError("grid.max_points: n_points 이상이어야 합니다.")
        if self.pricer.descendant_scheme == DescendantScheme.ANTITHETIC and self.pricer.n_descendants % 2:
            raise ValueError("pricer.n_descendants: antithetic 방식은 짝수여야 합니다.")
        return self

    @property
    def horizon(self) -> float:
        return self.grid.horizon if self.grid.horizon is not None else self.time.maturity

    def pricer_config(self) -> PricerConfig:
        """PricerConfig 조립 (seed, workers 는 최상위 값, 적합 후보 시드도 최상위 seed)"""
        return PricerConfig(
            propagation=self.pricer.propagation,
            n_descendants=self.pricer.n_descendants,
            descendant_scheme=self.pricer.descendant_scheme,
            fit=self.fit.model_copy(update={"seed": self.seed}),
            seed=self.seed,
            workers=self.workers,
        )

    def bounds_config(self) -> BoundsConfig:
        return BoundsConfig(
            n_paths_lower=self.bounds.n_paths_lower,
            n_paths_outer=self.bounds.n_paths_outer,
            n_inner=self.bounds.n_inner,
            seed=self.seed,
            workers=self.workers,
        )

    def lsmc_config(self) -> LsmcConfig:
        # 하한 경로와 겹치지 않도록 시드를 하나 옮김
        return LsmcConfig(n_paths=self.lsmc.n_paths, degree=self.lsmc.degree, seed=self.seed + 1, workers=self.workers)


class JobReport(BaseModel):
    """
    작업 보고서

    rows 는 문자열로 서식화된 값이므로 같은 (설정, 시드) 에서 CSV 가 비트 단위로 같습니다.
    """

    job: JobKind
    header: str = Field(..., description="버전이 붙은 CSV 머리말 주석")
    columns: list[str]
    rows: list[list[str]]
    lines: list[str] = Field(default_factory=list, description="사람이 읽는 추가 정보")
    exit_code: int = 0

    def to_csv(self) -> str:
        body = [self.header, ",".join(self.columns)] + [",".join(row) for row in self.rows]
        return "\n".join(body) + "\n"

    def to_table(self, max_rows: Optional[int] = None) -> str:
        """고정 폭 텍스트 표 (max_rows 를 넘는 행은 생략)"""
        shown = self.rows if max_rows is None else self.rows[:max_rows]
        widths = [max([len(c)] + [len(row[i]) for row in shown]) for i, c in enumerate(self.columns)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        out = [fmt.format(*self.columns), fmt.format(*("-" * w for w in widths))]
        out += [fmt.format(*row) for row in shown]
        if len(shown) < len(self.rows):
            out.append(f"... ({len(self.rows) - len(shown)} rows more, see CSV)")
        return "\n".join(out + self.lines)


class ErrorResponse(BaseModel):
    """
    에러 응답 스키마 (표준화)
    """

    error: str = Field(..., description="에러 유형")
    message: str = Field(..., description="에러 메시지")
    detail: Optional[str] = Field(None, description="상세 에러 정보 (디버깅용)")

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "error": "CONFIG_ERROR",
                "message": "market.correlation: 원소 (0, 1) 의 값 1.2 는 [-1, 1] 밖입니다.",
                "detail": None,
            }
        }
    )
