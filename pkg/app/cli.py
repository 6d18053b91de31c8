"""
명령줄 진입점

    python -m app.cli price configs/min_put_2d_european.toml --set grid.n_points=2048 --seed 7 --out out/

하위 명령이 설정의 job 값을 덮어씁니다. 표는 stdout, 로그는 stderr 로 나갑니다.
종료 코드: 0 성공, 2 설정/도메인 오류, 3 수치 실패(적합 중단), 4 성질 위반(rate-check).
"""

import argparse
import json
import sys
from typing import Optional

from app.core.config import configure_logging
from app.core.errors import PricingError, PropertyViolation
from app.schemas.run import JobKind
from app.services.jobs import load_config, parse_config, run_job
from loguru import logger

# 표에 직접 보여줄 최대 행 수 (나머지는 CSV)
MAX_TABLE_ROWS = 40


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="il-pricer", description="Interpolative Lattice 다자산 옵션 가격 엔진")
    sub = parser.add_subparsers(dest="job", required=True)
    for job in JobKind:
        cmd = sub.add_parser(job.value, help=f"{job.value} 작업 실행")
        cmd.add_argument("config", nargs="?", help="TOML 설정 파일 (rate-check 는 생략 가능)")
        cmd.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="설정 값 덮어쓰기 (반복 가능)")
        cmd.add_argument("--seed", type=int, help="시드")
        cmd.add_argument("--workers", type=int, help="작업자 수")
        cmd.add_argument("--out", help="결과 디렉터리")
        cmd.add_argument("--log-level", help="로그 레벨 (DEBUG, INFO, ...)")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """
    CLI 실행

    Returns:
        int: 종료 코드
    """
    args = build_parser().parse_args(argv)
    if args.log_level:
        configure_logging(args.log_level)

    overrides = [f"job={args.job}", *args.overrides]
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    if args.out is not None:
        overrides.append(f"out={json.dumps(args.out)}")

    try:
        cfg = load_config(args.config, overrides) if args.config else parse_config("", overrides)
        report = run_job(cfg)
    except PricingError as e:
        logger.error(f"[{e.code}] {e.message}")
        if e.detail:
            logger.error(e.detail)
        if isinstance(e, PropertyViolation) and e.report is not None:
            print(e.report.to_table(max_rows=MAX_TABLE_ROWS))
        return e.exit_code

    print(report.to_table(max_rows=MAX_TABLE_ROWS))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
