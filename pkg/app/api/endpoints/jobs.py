"""
작업 API 엔드포인트

RunConfig JSON 을 받아 CLI 와 같은 작업을 실행하고 JobReport 를 반환합니다.
"""

from typing import Any

from fastapi import APIRouter, Body, HTTPException, status

from app.core.errors import PricingError
from app.schemas.run import ErrorResponse, JobKind, JobReport
from app.services.jobs import config_from_dict, run_job
from loguru import logger

router = APIRouter(prefix="/api/v1/jobs", tags=["jobs"])


@router.get("/", response_model=list[str])
def list_jobs():
    """실행 가능한 작업 목록"""
    return [job.value for job in JobKind]


@router.post(
    "/{job}",
    response_model=JobReport,
    responses={422: {"model": ErrorResponse}, 500: {"model": ErrorResponse}},
)
def submit_job(job: JobKind, config: dict[str, Any] = Body(...)):
    """
    작업 실행

    경로의 job 이 본문의 job 값을 덮어씁니다. 서버 파일 시스템에는 쓰지 않으므로 out 은 무시합니다.

    Args:
        job: 작업 종류
        config: RunConfig JSON

    Returns:
        JobReport: CLI 가 출력하는 것과 같은 보고서
    """
    try:
        cfg = config_from_dict({**config, "job": job.value, "out": None})
        report = run_job(cfg)
        logger.info(f"HTTP 작업 완료: {job.value}, exit={report.exit_code}")
        return report
    except PricingError:
        # 앱 수준 예외 핸들러가 ErrorResponse 로 변환
        raise
    except Exception as e:
        logger.error(f"작업 실행 실패: {str(e)}")
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"작업 실행에 실패했습니다: {str(e)}",
        )
