"""
가우시안 혼합 근사 관련 Pydantic 스키마

연속 가치 근사의 표현(GaussianTerm, GaussianMixture, Surface)과
적합 설정/결과(FitConfig, FitReport)를 정의합니다.
"""

from enum import Enum
from functools import cached_property

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class RgaMode(str, Enum):
    """완화 탐욕 알고리즘의 재결합 방식"""

    CONVEX = "convex"
    AFFINE = "affine"


class GaussianTerm(BaseModel):
    """
    L2 정규화된 다변량 가우시안 항 하나

    값: weight · (det B)^{1/4} π^{-d/4} · exp(-½ (x-C)ᵀ B (x-C))
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weight: float = Field(..., description="부호 있는 계수 a")
    precision: np.ndarray = Field(..., description="정밀도 행렬 B (SPD)")
    center: np.ndarray = Field(..., description="중심 C")

    @model_validator(mode="after")
    def validate_precision(self) -> "GaussianTerm":
        """정밀도 행렬이 대칭 양정치인지 검증"""
        d = self.center.shape[0]
        if self.precision.shape != (d, d):
            raise ValueError("precision 과 center 의 차원이 맞지 않습니다.")
        if not np.allclose(self.precision, self.precision.T, rtol=1e-12, atol=0.0):
            raise ValueError("precision 은 대칭이어야 합니다.")
        np.linalg.cholesky(self.precision)
        return self


class GaussianMixture(BaseModel):
    """
    가우시안 혼합 Σ a_i φ(x; B_i, C_i)

    항 k 개를 배열로 보관합니다: weights (k), centers (k, d), precisions (k, d, d).
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    d: int = Field(..., ge=1, description="차원")
    weights: np.ndarray = Field(..., description="계수 (k)")
    centers: np.ndarray = Field(..., description="중심 (k, d)")
    precisions: np.ndarray = Field(..., description="정밀도 (k, d, d)")

    @model_validator(mode="after")
    def validate_terms(self) -> "GaussianMixture":
        """모든 항의 차원 일치와 정밀도 양정치성 검증"""
        k = self.weights.shape[0]
        if self.weights.ndim != 1:
            raise ValueError("weights 는 1차원이어야 합니다.")
        if self.centers.shape != (k, self.d) or self.precisions.shape != (k, self.d, self.d):
            raise ValueError("모든 항은 같은 차원 d 를 가져야 합니다.")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("계수에 유한하지 않은 값이 있습니다.")
        if k:
            np.linalg.cholesky(self.precisions)
        return self

    @classmethod
    def empty(cls, d: int) -> "GaussianMixture":
        """항이 없는 혼합 (어디서나 0)"""
        return cls(d=d, weights=np.zeros(0), centers=np.zeros((0, d)), precisions=np.zeros((0, d, d)))

    @classmethod
    def from_terms(cls, d: int, terms: list[GaussianTerm]) -> "GaussianMixture":
        """항 목록으로 혼합 구성 (빈 목록이면 빈 혼합)"""
        if not terms:
            return cls.empty(d)
        return cls(
            d=d,
            weights=np.array([t.weight for t in terms], dtype=float),
            centers=np.stack([t.center for t in terms]).astype(float),
            precisions=np.stack([t.precision for t in terms]).astype(float),
        )

    @property
    def n_terms(self) -> int:
        return int(self.weights.shape[0])

    @property
    def terms(self) -> list[GaussianTerm]:
        return [
            GaussianTerm(weight=float(w), precision=p, center=c)
            for w, c, p in zip(self.weights, self.centers, self.precisions)
        ]

    @property
    def coef_mass(self) -> float:
        """계수 질량 Σ|a_i|"""
        return float(np.abs(self.weights).sum())

    @cached_property
    def amplitudes(self) -> np.ndarray:
        """L2 정규화 진폭 (det B)^{1/4} π^{-d/4}"""
        if not self.n_terms:
            return np.zeros(0)
        _, logdet = np.linalg.slogdet(self.precisions)
        return np.exp(0.25 * logdet - 0.25 * self.d * np.log(np.pi))


class Surface(BaseModel):
    """한 시점의 연속 가치 곡면: 혼합 + 평균 오프셋"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mixture: GaussianMixture
    offset: float = 0.0


class FitConfig(BaseModel):
    """적합(완화 탐욕 알고리즘) 설정"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_terms: int = Field(default=200, ge=1, description="최대 항 수")
    n_center_candidates: int = Field(default=32, ge=1, description="라운드당 중심 후보 수")
    n_precision_scales: int = Field(default=5, ge=1, description="정밀도 사다리 단계 수")
    precision_ratio: float = Field(default=4.0, gt=1.0, description="사다리 인접 단계 비율")
    patience: int = Field(default=3, ge=0, description="연속 거절 허용 횟수")
    rga_mode: RgaMode = Field(default=RgaMode.AFFINE, description="재결합 방식")
    refine_iters: int = Field(default=12, ge=0, description="국소 탐색 반복 수")
    diagonal_precision: bool = Field(default=False, description="대각 정밀도 후보 사용")
    center_targets: bool = Field(default=True, description="학습 평균을 빼고 적합")
    backfit: bool = Field(default=True, description="affine 모드에서 항을 받을 때 전체 계수를 최소제곱으로 다시 풂")
    seed: int = Field(default=0, description="후보 추출 시드")


class FitReport(BaseModel):
    """적합 진단 결과"""

    model_config = ConfigDict(frozen=True)

    train_mse_trace: list[float] = Field(default_factory=list, description="항 수별 학습 MSE")
    val_mse_trace: list[float] = Field(default_factory=list, description="항 수별 검증 MSE")
    n_terms_selected: int = Field(default=0, ge=0, description="선택된 항 수")
    coef_mass: float = Field(default=0.0, ge=0, description="Σ|a_i|")
    residual_val_rms: float = Field(default=0.0, ge=0, description="검증 잔차 RMS")
    offset: float = Field(default=0.0, description="빼낸 학습 평균")
    rounds: int = Field(default=0, ge=0, description="전체 라운드 수")
    rejected_rounds: int = Field(default=0, ge=0, description="거절된 라운드 수")

    @model_validator(mode="after")
    def validate_trace(self) -> "FitReport":
        """선택된 항 수의 검증 MSE 가 추적값의 최솟값이어야 함"""
        if self.val_mse_trace:
            if self.n_terms_selected >= len(self.val_mse_trace):
                raise ValueError("n_terms_selected 가 추적 길이를 넘습니다.")
            if self.val_mse_trace[self.n_terms_selected] > min(self.val_mse_trace):
                raise ValueError("선택된 항 수의 검증 MSE 가 최솟값이 아닙니다.")
        return self


class RateRow(BaseModel):
    """수렴률 점검 표의 한 행"""

    n: int = Field(..., ge=1, description="항 수 n")
    eps_sq: float = Field(..., ge=0, description="ε_n² = ‖f_n - f‖²")
    bound: float = Field(..., description="정리의 상한 (α 인스턴스)")
    zero_eps_bound: float = Field(..., description="(K+1)²/n")
    eps_bound: float | None = Field(default=None, description="ε>0 일 때 ε² + 2(K+1)ε/√n + (K+1)²/n")
    holds: bool = Field(..., description="상한 충족 여부")


class RateCheckResult(BaseModel):
    """하나의 합성 목표에 대한 수렴률 점검 결과"""

    d: int
    n_target_terms: int
    coef_mass: float = Field(..., description="목표의 Σ|a_i| = K")
    alpha: float
    epsilon: float = 0.0
    hypothesis_met: bool = Field(..., description="후보 사전이 목표 항을 포함하는지")
    rows: list[RateRow] = Field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        return all(row.holds for row in self.rows)
