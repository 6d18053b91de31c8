"""
FastAPI 애플리케이션 엔트리 포인트

애플리케이션 초기화, 라우터 등록, 예외 핸들러 설정을 담당합니다.
"""

from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from app.api.endpoints.jobs import router as jobs_router
from app.core.config import get_settings
from app.core.errors import FitFailure, PricingError, PropertyViolation
from app.schemas.run import ErrorResponse
from loguru import logger

settings = get_settings()


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    애플리케이션 라이프사이클 관리
    """
    logger.info(f"{settings.app_name} v{settings.app_version} 시작됨")
    yield
    logger.info("애플리케이션 종료 중...")


# FastAPI 애플리케이션 생성
app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    description="다자산 American/European 옵션 보간 격자 가격 엔진 API",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=False,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.exception_handler(PricingError)
async def pricing_exception_handler(request: Request, exc: PricingError):
    """
    도메인 예외 핸들러

    설정/도메인 오류는 422, 수치 실패와 성질 위반은 500 으로 응답합니다.
    """
    status_code = 500 if isinstance(exc, (FitFailure, PropertyViolation)) else 422
    logger.warning(f"[{exc.code}] {exc.message}")
    body = ErrorResponse(error=exc.code, message=exc.message, detail=exc.detail)
    return JSONResponse(status_code=status_code, content=body.model_dump())


# 예외 처리 (전역 에러 핸들러)
@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    """
    전역 예외 핸들러

    처리되지 않은 예외를 캐치하여 적절한 형식으로 응답합니다.
    """
    logger.error(f"처리되지 않은 예외: {str(exc)}")

    return JSONResponse(
        status_code=500,
        content={
            "error": "INTERNAL_SERVER_ERROR",
            "message": "서버 내부 오류가 발생했습니다.",
            "detail": str(exc) if settings.debug else None,
        },
    )


# 라우터 등록
app.include_router(jobs_router)


# 헬스 체크 엔드포인트
@app.get("/health")
async def health_check():
    """
    헬스 체크

    애플리케이션 상태를 확인합니다.
    """
    return {
        "status": "healthy",
        "app_name": settings.app_name,
        "version": settings.app_version,
    }


# 루트 엔드포인트
@app.get("/")
async def root():
    """
    루트 엔드포인트

    API 기본 정보를 반환합니다.
    """
    return {
        "message": "Interpolative Lattice Pricer API",
        "version": settings.app_version,
        "docs": "/docs",
        "health": "/health",
        "jobs": "/api/v1/jobs/",
    }


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(
        "app.main:app",
        host=settings.host,
        port=settings.port,
        reload=settings.debug,
        log_level=settings.log_level.lower(),
    )
