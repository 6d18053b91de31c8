"""
작업 실행 서비스

설정 텍스트 해석(parse_config)과 price / bounds / benchmark / rate-check 작업 실행을 담당합니다.
CLI 와 HTTP 엔드포인트가 같은 함수를 사용합니다.
"""

import json
import sys
import time
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import ValidationError

from app.core.errors import ConfigurationError, PropertyViolation
from app.core.streams import StreamTag, substream
from app.schemas.grid import Grid, SobolConfig
from app.schemas.market import ExerciseStyle, PayoffKind
from app.schemas.mixture import GaussianMixture
from app.schemas.pricing import PriceResult
from app.schemas.run import CSV_SCHEMA_VERSION, JobKind, JobReport, RunConfig
from app.services import approx, baselines, bounds, lattice
from app.services.gridgen import export_grid_csv
from loguru import logger

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _fmt(value: Optional[float]) -> str:
    """CSV 값 서식 (빈 값은 빈 문자열)"""
    if value is None:
        return ""
    return f"{value:.10g}"


def _csv_header(job: JobKind) -> str:
    return f"# interpolative-lattice {job.value} v{CSV_SCHEMA_VERSION}"


# ---------------------------------------------------------------------------
# 설정 해석
# ---------------------------------------------------------------------------
def _parse_scalar(text: str) -> Any:
    """--set 값 해석: TOML 값으로 읽고, 실패하면 문자열로 취급"""
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """
    "a.b=value" 형식의 덮어쓰기 적용

    Raises:
        ConfigurationError: 형식이 잘못되었거나 경로가 섹션이 아닌 값을 지나가는 경우
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"덮어쓰기는 key=value 형식이어야 합니다: {item}", path=item)
        key, raw = item.split("=", 1)
        key = key.strip()
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError("섹션이 아닌 값 아래에 키를 둘 수 없습니다.", path=key)
            node = child
        node[parts[-1]] = _parse_scalar(raw.strip())
    return data


def _validation_to_config_error(error: ValidationError) -> ConfigurationError:
    """pydantic 검증 오류를 설정 경로가 붙은 ConfigurationError 로 변환"""
    issues = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"])
        message = str(item["msg"]).removeprefix("Value error, ")
        if not path and ":" in message:
            path, message = (s.strip() for s in message.split(":", 1))
        issues.append((path, message))
    path, message = issues[0]
    detail = "; ".join(f"{p}: {m}" for p, m in issues) if len(issues) > 1 else None
    return ConfigurationError(message, path=path or "config", detail=detail)


def parse_config(text: str, overrides: Optional[list[str]] = None) -> RunConfig:
    """
    TOML 설정 텍스트를 검증된 RunConfig 로 변환

    Args:
        text: TOML 텍스트 (테이블 = 섹션)
        overrides: "a.b=value" 덮어쓰기 목록

    Returns:
        RunConfig: 기본값이 채워진 설정

    Raises:
        ConfigurationError: 문법 오류, 알 수 없는 키, 범위 위반 (메시지는 설정 경로로 시작)
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"TOML 문법 오류: {e}", path="config") from e
    return config_from_dict(apply_overrides(data, overrides or []))


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    """dict(JSON/TOML) 를 RunConfig 로 검증"""
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise _validation_to_config_error(e) from e


def load_config(path: str | Path, overrides: Optional[list[str]] = None) -> RunConfig:
    """설정 파일 읽기"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"설정 파일을 읽을 수 없습니다: {path}", path="config") from e
    return parse_config(text, overrides)


# ---------------------------------------------------------------------------
# 작업
# ---------------------------------------------------------------------------
def _config_echo(cfg: RunConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, ensure_ascii=False)


def price_config(cfg: RunConfig) -> tuple[PriceResult, Grid]:
    """격자 생성 → 역방향 귀납 (교차 검증 격자 확대 포함)"""
    params = cfg.market.to_params()
    sobol = SobolConfig(dimension=params.d, skip=cfg.grid.sobol_skip, scramble_seed=cfg.grid.scramble_seed)
    return lattice.escalate_grid(
        params,
        cfg.payoff.to_spec(),
        cfg.time.to_grid(),
        cfg.pricer_config(),
        n_points=cfg.grid.n_points,
        horizon=cfg.horizon,
        spread=cfg.grid.spread,
        sobol=sobol,
        val_fraction=cfg.grid.val_fraction,
        split_seed=cfg.seed,
        target_val_rms=cfg.grid.target_val_rms,
        max_points=cfg.grid.max_points,
    )


def _write_outputs(cfg: RunConfig, report: JobReport, result: Optional[PriceResult] = None, grid: Optional[Grid] = None) -> None:
    """--out 디렉터리에 summary.csv, 곡면 파일, manifest, grid.csv 저장"""
    if not cfg.out:
        return
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(report.to_csv(), encoding="utf-8")
    if result is not None:
        lattice.export_result(result, out, config_echo=_config_echo(cfg))
    if grid is not None:
        export_grid_csv(grid, out / "grid.csv")
    logger.info(f"결과 저장됨: {out}")


def run_price(cfg: RunConfig) -> JobReport:
    """
    price 작업: 격자 생성 → 역방향 귀납

    CSV 한 행에 value0 와 시점 0 적합 진단을 담고, 시점별 진단과 소요 시간은 표 아래에 붙입니다.
    """
    logger.info(f"price 작업 시작: seed={cfg.seed}, workers={cfg.workers}")
    result, grid = price_config(cfg)
    report0 = result.fit_reports[0]
    spec = result.payoff
    row = [
        spec.kind.value,
        spec.style.value,
        str(result.market.d),
        str(result.time_grid.steps),
        str(grid.n_g),
        _fmt(result.value0),
        str(report0.n_terms_selected),
        _fmt(report0.residual_val_rms),
    ]
    lines = [""] + [
        f"slice {t}: terms={r.n_terms_selected} val_rms={r.residual_val_rms:.3e} rounds={r.rounds}"
        for t, r in enumerate(result.fit_reports)
    ]
    lines.append("timing: " + ", ".join(f"{k}={v:.2f}s" for k, v in result.timing.items()))
    report = JobReport(
        job=JobKind.PRICE,
        header=_csv_header(JobKind.PRICE),
        columns=["payoff", "style", "d", "steps", "grid_points", "value0", "slice0_terms", "slice0_val_rms"],
        rows=[row],
        lines=lines,
    )
    _write_outputs(cfg, report, result, grid)
    return report


def run_bounds(cfg: RunConfig) -> JobReport:
    """bounds 작업: 가격 계산 후 하한/상한 추정"""
    logger.info(f"bounds 작업 시작: seed={cfg.seed}, workers={cfg.workers}")
    result, grid = price_config(cfg)
    est = bounds.compute_bounds(result, cfg.bounds_config())
    row = [
        _fmt(result.value0),
        _fmt(est.v_lower),
        _fmt(est.se_lower),
        _fmt(est.v_upper),
        _fmt(est.se_upper),
        _fmt(est.gap),
        _fmt(est.mean_increment),
        _fmt(est.se_increment),
    ]
    report = JobReport(
        job=JobKind.BOUNDS,
        header=_csv_header(JobKind.BOUNDS),
        columns=["value0", "v_lower", "se_lower", "v_upper", "se_upper", "gap", "mean_increment", "se_increment"],
        rows=[row],
    )
    _write_outputs(cfg, report, result, grid)
    return report


def applicable_methods(cfg: RunConfig) -> list[str]:
    """설정된 상품에 적용 가능한 기준 가격 방법"""
    spec = cfg.payoff
    methods = ["IL", "IL-lower", "IL-upper"]
    european = spec.style == ExerciseStyle.EUROPEAN
    if european and spec.kind == PayoffKind.MIN_PUT and len(cfg.market.spots) == 2:
        methods.append("Stulz")
    if european:
        methods.append("MC")
    else:
        methods.append("LSMC")
    if spec.kind in (PayoffKind.GEO_MEAN_PUT, PayoffKind.GEO_MEAN_CALL):
        methods.append("Binomial-reduced")
    return methods


def run_benchmark(cfg: RunConfig) -> JobReport:
    """
    benchmark 작업: IL, 상하한, 적용 가능한 모든 기준 가격을 한 표로

    CSV 열은 method, price, se, gap 이며 소요 시간은 표 아래 줄에만 표시합니다.
    """
    logger.info(f"benchmark 작업 시작: seed={cfg.seed}, workers={cfg.workers}")
    params = cfg.market.to_params()
    spec = cfg.payoff.to_spec()
    tg = cfg.time.to_grid()
    methods = applicable_methods(cfg)
    rows: list[list[str]] = []
    runtimes: dict[str, float] = {}

    tick = time.perf_counter()
    result, grid = price_config(cfg)
    runtimes["IL"] = time.perf_counter() - tick
    rows.append(["IL", _fmt(result.value0), "", ""])

    tick = time.perf_counter()
    est = bounds.compute_bounds(result, cfg.bounds_config())
    runtimes["bounds"] = time.perf_counter() - tick
    rows.append(["IL-lower", _fmt(est.v_lower), _fmt(est.se_lower), ""])
    rows.append(["IL-upper", _fmt(est.v_upper), _fmt(est.se_upper), _fmt(est.gap)])

    if "Stulz" in methods:
        tick = time.perf_counter()
        price = baselines.stulz_european_min_put(params, spec.strike, tg.maturity)
        runtimes["Stulz"] = time.perf_counter() - tick
        rows.append(["Stulz", _fmt(price), "0", ""])
    if "MC" in methods:
        tick = time.perf_counter()
        price, se = baselines.european_mc(params, spec, tg.maturity, cfg.benchmark.mc_paths, cfg.seed, cfg.workers)
        runtimes["MC"] = time.perf_counter() - tick
        rows.append(["MC", _fmt(price), _fmt(se), ""])
    if "LSMC" in methods:
        tick = time.perf_counter()
        price, se = baselines.lsmc_american(params, spec, tg, cfg.lsmc_config())
        runtimes["LSMC"] = time.perf_counter() - tick
        rows.append(["LSMC", _fmt(price), _fmt(se), ""])
    if "Binomial-reduced" in methods:
        tick = time.perf_counter()
        reduction = baselines.geo_reduce(params, spec)
        price = baselines.converged_binomial(reduction, params.r, spec, tg.maturity, cfg.benchmark.binomial_steps)
        runtimes["Binomial-reduced"] = time.perf_counter() - tick
        rows.append(["Binomial-reduced", _fmt(price), "0", ""])

    report = JobReport(
        job=JobKind.BENCHMARK,
        header=_csv_header(JobKind.BENCHMARK),
        columns=["method", "price", "se", "gap"],
        rows=rows,
        lines=["", "runtime: " + ", ".join(f"{k}={v:.2f}s" for k, v in runtimes.items())],
    )
    _write_outputs(cfg, report, result, grid)
    return report


def synthetic_target(d: int, n_components: int, coef_mass: float, rng: np.random.Generator) -> GaussianMixture:
    """
    합성 목표 혼합

    계수 절댓값은 Dirichlet 분할로 Σ|a_i| = coef_mass 가 되게 하고 부호는 무작위,
    중심은 N(0, I), 정밀도는 A·Aᵀ/d + 0.5·I 형태의 무작위 SPD 행렬입니다.
    """
    magnitudes = rng.dirichlet(np.ones(n_components)) * coef_mass
    signs = rng.choice([-1.0, 1.0], size=n_components)
    centers = rng.standard_normal((n_components, d))
    raw = rng.standard_normal((n_components, d, d))
    precisions = raw @ np.swapaxes(raw, -1, -2) / d + 0.5 * np.eye(d)
    return GaussianMixture(d=d, weights=signs * magnitudes, centers=centers, precisions=precisions)


def run_rate_check(cfg: RunConfig) -> JobReport:
    """
    rate-check 작업: 합성 목표마다 정리의 수렴률 상한 점검

    가설(사전이 목표 항을 포함)이 충족된 상태에서 상한이 하나라도 깨지면 출력을 쓴 뒤
    보고서를 담은 PropertyViolation 을 던집니다.
    가설이 충족되지 않으면 표에 "unmet" 으로 표시할 뿐 실패로 보지 않습니다.
    """
    rc = cfg.rate_check
    logger.info(f"rate-check 작업 시작: targets={rc.n_targets}, max_terms={rc.max_terms}")
    rows: list[list[str]] = []
    lines: list[str] = [""]
    violated: list[int] = []
    for k in range(rc.n_targets):
        rng = substream(cfg.seed, StreamTag.RATE, 0, k)
        d = rc.dims[k % len(rc.dims)]
        coef_mass = float(rng.uniform(rc.k_min, rc.k_max))
        target = synthetic_target(d, rc.n_components, coef_mass, rng)
        check = approx.theorem_rate_check(
            target,
            max_terms=rc.max_terms,
            alpha=rc.alpha,
            exact_dictionary=rc.exact_dictionary,
            epsilon=rc.epsilon,
            seed=cfg.seed + k,
        )
        hypothesis = "met" if check.hypothesis_met else "unmet"
        for row in check.rows:
            rows.append(
                [
                    str(k),
                    str(d),
                    _fmt(check.coef_mass),
                    str(row.n),
                    _fmt(row.eps_sq),
                    _fmt(row.bound),
                    _fmt(row.zero_eps_bound),
                    _fmt(row.eps_bound),
                    "yes" if row.holds else "no",
                    hypothesis,
                ]
            )
        last = check.rows[-1]
        lines.append(
            f"target {k}: d={d} K={check.coef_mass:.4f} eps_sq[{last.n}]={last.eps_sq:.3e} "
            f"bound={last.bound:.3e} all_hold={check.all_hold} hypothesis={hypothesis}"
        )
        if check.hypothesis_met and not check.all_hold:
            violated.append(k)

    report = JobReport(
        job=JobKind.RATE_CHECK,
        header=_csv_header(JobKind.RATE_CHECK),
        columns=["target", "d", "coef_mass", "n", "eps_sq", "bound", "zero_eps_bound", "eps_bound", "holds", "hypothesis"],
        rows=rows,
        lines=lines,
        exit_code=PropertyViolation.exit_code if violated else 0,
    )
    _write_outputs(cfg, report)
    if violated:
        raise PropertyViolation(
            "가설이 충족된 상태에서 수렴률 상한이 깨졌습니다.",
            report=report,
            detail="targets: " + ", ".join(map(str, violated)),
        )
    return report


_RUNNERS = {
    JobKind.PRICE: run_price,
    JobKind.BOUNDS: run_bounds,
    JobKind.BENCHMARK: run_benchmark,
    JobKind.RATE_CHECK: run_rate_check,
}


def run_job(cfg: RunConfig) -> JobReport:
    """cfg.job 에 맞는 작업 실행"""
    tick = time.perf_counter()
    report = _RUNNERS[cfg.job](cfg)
    logger.info(f"{cfg.job.value} 작업 완료: {time.perf_counter() - tick:.2f}s, exit={report.exit_code}")
    return report

