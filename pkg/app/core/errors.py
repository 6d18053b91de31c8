"""
도메인 예외 정의

모든 예외는 기계가 읽을 수 있는 에러 코드(code)와 CLI 종료 코드(exit_code)를 가집니다.
HTTP 응답의 ErrorResponse.error 필드와 CLI 종료 코드가 같은 분류를 공유합니다.
"""

from typing import Any, Optional


class PricingError(Exception):
    """가격 엔진 예외의 공통 부모"""

    code: str = "PRICING_ERROR"
    exit_code: int = 1

    def __init__(self, message: str, *, detail: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.detail = detail


class DomainError(PricingError, ValueError):
    """연산의 사전 조건 위반 (음수 가격, 차원 불일치, 범위를 벗어난 인덱스 등)"""

    code = "DOMAIN_ERROR"
    exit_code = 2


class ConfigurationError(PricingError, ValueError):
    """
    설정 오류

    RunConfig 검증 실패 시 메시지는 항상 문제가 된 설정 경로(예: market.correlation)로 시작합니다.
    """

    code = "CONFIG_ERROR"
    exit_code = 2

    def __init__(self, message: str, *, path: Optional[str] = None, detail: Optional[str] = None):
        if path and not message.startswith(path):
            message = f"{path}: {message}"
        super().__init__(message, detail=detail)
        self.path = path


class FitFailure(PricingError, RuntimeError):
    """
    근사(적합) 실패

    역방향 귀납 도중 발생하면 시점 인덱스와 FitReport 를 함께 전달합니다.
    """

    code = "NUMERICAL_FAILURE"
    exit_code = 3

    def __init__(self, message: str, *, slice_index: Optional[int] = None, report: Any = None):
        if slice_index is not None:
            message = f"slice {slice_index}: {message}"
        super().__init__(message)
        self.slice_index = slice_index
        self.report = report


class PropertyViolation(PricingError, AssertionError):
    """
    가정이 충족된 상태에서 수렴률 상한이 깨진 경우 (rate-check)

    완성된 JobReport 를 함께 전달하므로 CLI 는 표를 출력한 뒤 종료 코드 4 를 돌려줍니다.
    """

    code = "PROPERTY_VIOLATION"
    exit_code = 4

    def __init__(self, message: str, *, report: Any = None, detail: Optional[str] = None):
        super().__init__(message, detail=detail)
        self.report = report
