"""
가우시안 혼합 적합 서비스

완화 탐욕 알고리즘(RGA)으로 격자 위의 스칼라 함수를 L2 정규화 가우시안의 합으로 근사합니다.
라운드마다 후보를 제안하고, 학습 MSE 가 가장 작은 후보를 고른 뒤,
검증 MSE 가 줄어들 때만 항을 받아들입니다. 정리 수렴률 점검과 텍스트 직렬화도 여기 있습니다.
"""

from pathlib import Path
from typing import Optional

import numpy as np

from app.core.errors import DomainError, FitFailure
from app.core.streams import StreamTag, chunked, parallel_map, substream
from app.schemas.mixture import (
    FitConfig,
    FitReport,
    GaussianMixture,
    GaussianTerm,
    RateCheckResult,
    RateRow,
    RgaMode,
    Surface,
)
from loguru import logger

# 정밀도 고유값 하한/상한 (격자 척도 대비)
PRECISION_FLOOR = 1e-8
PRECISION_CEIL = 1e8

# (점 수 × 항 수 × d) 조각 크기 상한
_EVAL_BLOCK = 4_000_000

# 후보 평가 조각 크기 (작업자 수와 무관해야 결과가 같음)
_CANDIDATE_CHUNK = 16

# 계수 재적합의 상대 릿지
BACKFIT_RIDGE = 1e-10


# ---------------------------------------------------------------------------
# 평가
# ---------------------------------------------------------------------------
def gaussian_amplitude(precisions: np.ndarray) -> np.ndarray:
    """L2 정규화 진폭 (det B)^{1/4} π^{-d/4} (precisions: (k, d, d))"""
    d = precisions.shape[-1]
    _, logdet = np.linalg.slogdet(precisions)
    return np.exp(0.25 * logdet - 0.25 * d * np.log(np.pi))


def basis_values(
    x: np.ndarray,
    centers: np.ndarray,
    precisions: np.ndarray,
    amplitudes: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    정규화 가우시안 기저 값 행렬

    Args:
        x: (n, d) 평가 점
        centers: (k, d) 중심
        precisions: (k, d, d) 정밀도
        amplitudes: 미리 계산한 진폭 (k)

    Returns:
        np.ndarray: (n, k) 행렬, [i, j] = φ_j(x_i)
    """
    n, d = x.shape
    k = centers.shape[0]
    if k == 0:
        return np.zeros((n, 0))
    amp = gaussian_amplitude(precisions) if amplitudes is None else amplitudes
    out = np.empty((n, k))
    step = max(1, _EVAL_BLOCK // max(1, k * d))
    for start in range(0, n, step):
        diff = x[start : start + step, None, :] - centers[None, :, :]
        quad = np.einsum("nkd,kde,nke->nk", diff, precisions, diff, optimize=True)
        out[start : start + step] = amp * np.exp(-0.5 * quad)
    return out


def evaluate(mixture: GaussianMixture, x: np.ndarray) -> np.ndarray | float:
    """
    혼합 값 Σ a_i φ_i(x)

    Args:
        mixture: 가우시안 혼합
        x: (d) 점 하나 또는 (n, d) 점 배열

    Returns:
        float 또는 (n) 배열

    Raises:
        DomainError: 차원 불일치
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = arr[None, :] if single else arr
    if pts.ndim != 2 or pts.shape[1] != mixture.d:
        raise DomainError(f"점의 차원이 혼합 차원 {mixture.d} 와 다릅니다: {arr.shape}")
    if mixture.n_terms == 0:
        values = np.zeros(pts.shape[0])
    else:
        phi = basis_values(pts, mixture.centers, mixture.precisions, mixture.amplitudes)
        values = phi @ mixture.weights
    return float(values[0]) if single else values


def evaluate_surface(surface: Surface, x: np.ndarray) -> np.ndarray | float:
    """곡면 값 = 혼합 + 오프셋"""
    return evaluate(surface.mixture, x) + surface.offset


def gaussian_gram(
    centers_a: np.ndarray,
    precisions_a: np.ndarray,
    centers_b: np.ndarray,
    precisions_b: np.ndarray,
) -> np.ndarray:
    """
    정규화 가우시안 사이의 L2 내적 행렬 ⟨φ_i, ψ_j⟩

    ∫ exp(-½(x-a)ᵀA(x-a) - ½(x-b)ᵀB(x-b)) dx
        = (2π)^{d/2} det(A+B)^{-1/2} exp(-½ δᵀ A (A+B)⁻¹ B δ), δ = a - b
    """
    d = centers_a.shape[1]
    amp_a = gaussian_amplitude(precisions_a) if len(centers_a) else np.zeros(0)
    amp_b = gaussian_amplitude(precisions_b) if len(centers_b) else np.zeros(0)
    summed = precisions_a[:, None, :, :] + precisions_b[None, :, :, :]
    delta = centers_a[:, None, :] - centers_b[None, :, :]
    _, logdet = np.linalg.slogdet(summed)
    # A (A+B)⁻¹ B δ
    b_delta = np.einsum("jde,ije->ijd", precisions_b, delta)
    solved = np.linalg.solve(summed, b_delta[..., None])[..., 0]
    quad = np.einsum("ijd,ide,ije->ij", delta, precisions_a, solved)
    integral = np.exp(0.5 * d * np.log(2.0 * np.pi) - 0.5 * logdet - 0.5 * quad)
    return amp_a[:, None] * amp_b[None, :] * integral


def l2_norm(mixture: GaussianMixture) -> float:
    """혼합의 정확한 L2 노름 (가우시안 곱 적분 이용)"""
    if mixture.n_terms == 0:
        return 0.0
    gram = gaussian_gram(mixture.centers, mixture.precisions, mixture.centers, mixture.precisions)
    return float(np.sqrt(max(float(mixture.weights @ gram @ mixture.weights), 0.0)))


def mixture_difference(left: GaussianMixture, right: GaussianMixture) -> GaussianMixture:
    """left - right 를 하나의 혼합으로 표현"""
    if left.d != right.d:
        raise DomainError("차원이 다른 혼합은 뺄 수 없습니다.")
    return GaussianMixture(
        d=left.d,
        weights=np.concatenate([left.weights, -right.weights]),
        centers=np.concatenate([left.centers, right.centers]),
        precisions=np.concatenate([left.precisions, right.precisions]),
    )


# ---------------------------------------------------------------------------
# 후보 제안
# ---------------------------------------------------------------------------
def base_precision(xs: np.ndarray, diagonal: bool = False) -> np.ndarray:
    """
    격자 척도의 기준 정밀도

    등방이면 (1 / 평균 분산)·I, 대각이면 diag(1 / 분산_i). 분산이 0 인 축은 1 로 둡니다.
    """
    var = xs.var(axis=0) if xs.shape[0] > 1 else np.ones(xs.shape[1])
    var = np.where(var > 0, var, 1.0)
    if diagonal:
        return np.diag(1.0 / var)
    return np.eye(xs.shape[1]) / float(var.mean())


def precision_ladder(base: np.ndarray, n_scales: int, ratio: float = 4.0) -> list[np.ndarray]:
    """
    정밀도 사다리 base·ratio^(j - n//2), j = 0..n-1

    n=3, ratio=4 이면 {base/4, base, 4·base}.
    """
    return [base * ratio ** (j - n_scales // 2) for j in range(n_scales)]


def clamp_precision(precision: np.ndarray, scale: float) -> np.ndarray:
    """고유값을 [1e-8, 1e8]·scale 로 제한"""
    eig, vec = np.linalg.eigh(0.5 * (precision + precision.T))
    eig = np.clip(eig, PRECISION_FLOOR * scale, PRECISION_CEIL * scale)
    clamped = (vec * eig) @ vec.T
    return 0.5 * (clamped + clamped.T)


def propose_candidates(
    residual: np.ndarray,
    xs: np.ndarray,
    cfg: FitConfig,
    rng: Optional[np.random.Generator] = None,
    base: Optional[np.ndarray] = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """
    (B, C) 후보 목록 제안

    중심은 잔차 최대 지점 하나와 잔차² 에 비례한 확률로 뽑은 학습점들이며,
    각 중심마다 정밀도 사다리의 모든 단계를 붙입니다 (중심 순서 × 사다리 순서).

    Args:
        residual: 학습점 잔차 (n)
        xs: 학습점 (n, d)
        cfg: 적합 설정
        rng: 후보 추출 생성기
        base: 기준 정밀도 (없으면 xs 로 계산)

    Returns:
        list[tuple[np.ndarray, np.ndarray]]: (precision, center) 목록, 잔차가 모두 0 이면 빈 목록
    """
    weights = np.asarray(residual, dtype=float) ** 2
    total = weights.sum()
    if not total > 0:
        return []
    rng = substream(cfg.seed, StreamTag.CANDIDATES) if rng is None else rng
    base = base_precision(xs, cfg.diagonal_precision) if base is None else base
    scale = float(np.mean(np.diag(base)))

    picks = [int(np.argmax(weights))]
    if cfg.n_center_candidates > 1:
        picks.extend(rng.choice(len(weights), size=cfg.n_center_candidates - 1, p=weights / total).tolist())

    ladder = [clamp_precision(p, scale) for p in precision_ladder(base, cfg.n_precision_scales, cfg.precision_ratio)]
    return [(precision, xs[i].copy()) for i in picks for precision in ladder]


# ---------------------------------------------------------------------------
# 재결합
# ---------------------------------------------------------------------------
def _recombine_batch(
    f: np.ndarray,
    phi: np.ndarray,
    y: np.ndarray,
    mode: RgaMode,
    level: Optional[float] = None,
    mass: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    후보 열마다 계수 (a, b) 와 제곱오차합 계산

    새 근사는 a·f + b·φ 입니다. phi 는 (n, c) 행렬.

    Returns:
        (a, b, sse): 각각 (c) 배열
    """
    ff = float(f @ f)
    fy = float(f @ y)
    yy = float(y @ y)
    phi_y = phi.T @ y
    phi_f = phi.T @ f
    phi_phi = np.einsum("nc,nc->c", phi, phi)
    tiny = np.finfo(float).tiny

    def sse_of(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        sse = yy - 2 * a * fy - 2 * b * phi_y + a * a * ff + 2 * a * b * phi_f + b * b * phi_phi
        return np.maximum(sse, 0.0)

    if mode == RgaMode.AFFINE:
        if ff <= tiny:
            a = np.ones_like(phi_y)
            b = np.where(phi_phi > tiny, phi_y / np.where(phi_phi > tiny, phi_phi, 1.0), 0.0)
        else:
            det = ff * phi_phi - phi_f**2
            singular = det <= 1e-12 * ff * phi_phi
            safe = np.where(singular, 1.0, det)
            a = np.where(singular, fy / ff, (phi_phi * fy - phi_f * phi_y) / safe)
            b = np.where(singular, 0.0, (ff * phi_y - phi_f * fy) / safe)
        return a, b, sse_of(a, b)

    # convex: 1차원 최소제곱으로 부호와 수준을 정하고 λ ∈ [0, 1] 를 닫힌 꼴로 구함
    resid_proj = np.where(phi_phi > tiny, (phi_y - phi_f) / np.where(phi_phi > tiny, phi_phi, 1.0), 0.0)
    signs = [np.where(resid_proj < 0, -1.0, 1.0)] if level is None else [np.ones_like(phi_y), -np.ones_like(phi_y)]
    k_hat = (mass + np.abs(resid_proj)) if level is None else np.full_like(phi_y, float(level))

    best = None
    for s in signs:
        g_scale = s * k_hat
        num = g_scale * (phi_y - phi_f) - (fy - ff)
        den = g_scale**2 * phi_phi - 2 * g_scale * phi_f + ff
        lam = np.where(den > tiny, num / np.where(den > tiny, den, 1.0), 0.0)
        lam = np.clip(lam, 0.0, 1.0)
        a, b = 1.0 - lam, lam * g_scale
        sse = sse_of(a, b)
        if best is None:
            best = (a, b, sse)
        else:
            better = sse < best[2]
            best = (np.where(better, a, best[0]), np.where(better, b, best[1]), np.where(better, sse, best[2]))
    return best


def recombine(
    f_values: np.ndarray,
    phi_values: np.ndarray,
    ys: np.ndarray,
    mode: RgaMode | str,
    *,
    level: Optional[float] = None,
    mass: float = 0.0,
) -> tuple[float, float]:
    """
    현재 근사 f_n 과 새 기저 φ 의 재결합 계수

    affine: (a, b) = argmin ‖a·f_n + b·φ - y‖² (2×2 정규방정식, 특이하면 b = 0).
    convex: λ* = argmin_{λ∈[0,1]} ‖(1-λ)f_n + λ·s·K̂·φ - y‖², a = 1-λ*, b = λ*·s·K̂.
    K̂ 는 level 이 주어지면 그 값(부호 ±를 모두 시도), 아니면 현재 계수 질량 + 잔차의 1차원 최소제곱 계수입니다.

    Returns:
        (a, b): 새 근사 a·f_n + b·φ 의 계수
    """
    f = np.asarray(f_values, dtype=float)
    phi = np.asarray(phi_values, dtype=float)
    y = np.asarray(ys, dtype=float)
    if not (f.shape == phi.shape == y.shape):
        raise DomainError("f_n, φ, y 의 길이가 같아야 합니다.")
    a, b, _ = _recombine_batch(f, phi[:, None], y, RgaMode(mode), level=level, mass=mass)
    return float(a[0]), float(b[0])


def backfit_weights(gram: np.ndarray, rhs: np.ndarray, ridge: float = BACKFIT_RIDGE) -> Optional[np.ndarray]:
    """
    선택된 기저 전체의 계수를 최소제곱으로 다시 풂

    (ΦᵀΦ + λI)w = Φᵀy 를 풉니다. λ 는 ridge × 대각 평균입니다.
    풀 수 없거나 결과가 유한하지 않으면 None.
    """
    k = gram.shape[0]
    if k == 0:
        return np.zeros(0)
    lam = ridge * max(float(np.mean(np.diag(gram))), np.finfo(float).tiny)
    try:
        w = np.linalg.solve(gram + lam * np.eye(k), rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(w)):
        return None
    return w


# ---------------------------------------------------------------------------
# 적합
# ---------------------------------------------------------------------------
def _canonical_order(xs: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """좌표 사전식 정렬로 입력 순서와 무관한 인덱스 순서를 만듦"""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        return idx
    pts = xs[idx]
    order = np.lexsort(pts.T[::-1])
    return idx[order]


class GreedyFitter:
    """
    완화 탐욕 알고리즘 적합기

    라운드마다 후보를 제안하고, 학습 MSE 최소 후보를 국소 탐색으로 다듬은 뒤,
    검증 MSE 가 줄어들 때만 받아들입니다. patience 번 연속 거절되거나 max_terms 에 도달하면 멈춥니다.
    affine 모드에서 backfit 이 켜져 있으면 새 항을 붙일 때 전체 계수를 최소제곱으로 다시 풀고,
    검증 MSE 가 더 작은 쪽(재적합 또는 a·f + b·φ)을 씁니다.
    """

    def __init__(self, cfg: FitConfig, workers: int = 1):
        self.cfg = cfg
        self.workers = max(1, workers)

    def fit(
        self,
        xs: np.ndarray,
        ys: np.ndarray,
        train_idx: np.ndarray,
        val_idx: np.ndarray,
    ) -> tuple[GaussianMixture, FitReport]:
        """
        가우시안 혼합 적합

        Args:
            xs: (n, d) 표본점
            ys: (n) 목표값
            train_idx: 학습 인덱스 (|train| >= d+2)
            val_idx: 검증 인덱스 (비어 있으면 학습 MSE 로 수락 판정)

        Returns:
            (GaussianMixture, FitReport): 적합 혼합 (오프셋은 report.offset)
        """
        cfg = self.cfg
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        n, d = xs.shape
        train = _canonical_order(xs, train_idx)
        val = _canonical_order(xs, val_idx)
        if train.size < d + 2:
            raise DomainError(f"학습점은 d+2 = {d + 2} 개 이상이어야 합니다: {train.size}")
        if not np.all(np.isfinite(ys[train])) or not np.all(np.isfinite(ys[val])):
            raise FitFailure("목표값에 유한하지 않은 값이 있습니다.")

        x_tr, x_va = xs[train], xs[val]
        offset = float(ys[train].mean()) if cfg.center_targets else 0.0
        t_tr = ys[train] - offset
        t_va = ys[val] - offset
        has_val = val.size > 0

        f_tr = np.zeros(train.size)
        f_va = np.zeros(val.size)
        weights: list[float] = []
        centers: list[np.ndarray] = []
        precisions: list[np.ndarray] = []
        mass = 0.0

        mse_tr = float(np.mean(t_tr**2))
        mse_va = float(np.mean(t_va**2)) if has_val else mse_tr
        train_trace, val_trace = [mse_tr], [mse_va]

        base = base_precision(x_tr, cfg.diagonal_precision)
        scale = float(np.mean(np.diag(base)))
        rng = substream(cfg.seed, StreamTag.CANDIDATES)
        zero_level = 1e-14 * max(1.0, float(np.max(np.abs(t_tr))) if t_tr.size else 1.0)

        # 받아들인 기저 열과 정규방정식 (backfit 일 때만)
        use_backfit = cfg.backfit and cfg.rga_mode == RgaMode.AFFINE
        width = cfg.max_terms if use_backfit else 0
        cols_tr = np.empty((train.size, width))
        cols_va = np.empty((val.size, width))
        gram = np.empty((width, width))
        rhs = np.empty(width)

        rounds = rejected_total = streak = 0
        while len(weights) < cfg.max_terms:
            residual = t_tr - f_tr
            if np.max(np.abs(residual)) <= zero_level:
                break
            candidates = propose_candidates(residual, x_tr, cfg, rng, base)
            if not candidates:
                break
            rounds += 1

            precision, center, a, b, phi_tr = self._select(candidates, x_tr, f_tr, t_tr, mass)
            if cfg.refine_iters:
                precision, center, a, b, phi_tr = self._refine(precision, center, a, b, phi_tr, x_tr, f_tr, t_tr, mass, scale)

            k = len(weights)
            phi_va = basis_values(x_va, center[None, :], precision[None, :, :])[:, 0] if has_val else f_va
            new_weights = np.append(a * np.asarray(weights, dtype=float), b)
            new_f_tr = a * f_tr + b * phi_tr
            new_f_va = a * f_va + b * phi_va if has_val else f_va
            new_mse_tr = float(np.mean((t_tr - new_f_tr) ** 2))
            new_mse_va = float(np.mean((t_va - new_f_va) ** 2)) if has_val else new_mse_tr

            if use_backfit:
                col = phi_tr @ cols_tr[:, :k]
                gram_next = np.empty((k + 1, k + 1))
                gram_next[:k, :k] = gram[:k, :k]
                gram_next[:k, k] = gram_next[k, :k] = col
                gram_next[k, k] = float(phi_tr @ phi_tr)
                rhs_next = np.append(rhs[:k], float(phi_tr @ t_tr))
                w_fit = backfit_weights(gram_next, rhs_next)
                if w_fit is not None and w_fit[k] != 0.0:
                    fit_tr = cols_tr[:, :k] @ w_fit[:k] + w_fit[k] * phi_tr
                    fit_mse_tr = float(np.mean((t_tr - fit_tr) ** 2))
                    if has_val:
                        fit_va = cols_va[:, :k] @ w_fit[:k] + w_fit[k] * phi_va
                        fit_mse_va = float(np.mean((t_va - fit_va) ** 2))
                    else:
                        fit_va, fit_mse_va = f_va, fit_mse_tr
                    if fit_mse_va < new_mse_va:
                        new_weights, new_f_tr, new_f_va = w_fit, fit_tr, fit_va
                        new_mse_tr, new_mse_va = fit_mse_tr, fit_mse_va

            if new_mse_va < mse_va and new_weights[k] != 0.0:
                weights = new_weights.tolist()
                centers.append(center)
                precisions.append(precision)
                mass = float(np.sum(np.abs(new_weights)))
                if use_backfit:
                    cols_tr[:, k] = phi_tr
                    if has_val:
                        cols_va[:, k] = phi_va
                    gram[: k + 1, : k + 1] = gram_next
                    rhs[: k + 1] = rhs_next
                f_tr, f_va = new_f_tr, new_f_va
                mse_tr, mse_va = new_mse_tr, new_mse_va
                train_trace.append(mse_tr)
                val_trace.append(mse_va)
                streak = 0
                logger.debug(f"항 추가: n={len(weights)}, train_mse={mse_tr:.3e}, val_mse={mse_va:.3e}")
            else:
                streak += 1
                rejected_total += 1
                if streak >= max(cfg.patience, 1):
                    break

        mixture = GaussianMixture(
            d=d,
            weights=np.asarray(weights, dtype=float),
            centers=np.asarray(centers, dtype=float).reshape(len(weights), d),
            precisions=np.asarray(precisions, dtype=float).reshape(len(weights), d, d),
        )
        report = FitReport(
            train_mse_trace=train_trace,
            val_mse_trace=val_trace,
            n_terms_selected=len(weights),
            coef_mass=mixture.coef_mass,
            residual_val_rms=float(np.sqrt(mse_va)),
            offset=offset,
            rounds=rounds,
            rejected_rounds=rejected_total,
        )
        return mixture, report

    def fit_surface(self, xs: np.ndarray, ys: np.ndarray, train_idx: np.ndarray, val_idx: np.ndarray) -> tuple[Surface, FitReport]:
        """적합 결과를 오프셋 포함 곡면으로 반환"""
        mixture, report = self.fit(xs, ys, train_idx, val_idx)
        return Surface(mixture=mixture, offset=report.offset), report

    def _select(
        self,
        candidates: list[tuple[np.ndarray, np.ndarray]],
        x_tr: np.ndarray,
        f_tr: np.ndarray,
        t_tr: np.ndarray,
        mass: float,
    ) -> tuple[np.ndarray, np.ndarray, float, float, np.ndarray]:
        """후보 중 학습 SSE 최소 (동률이면 가장 앞 인덱스)"""
        mode = self.cfg.rga_mode
        size = _CANDIDATE_CHUNK

        def score(chunk: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            precs = np.stack([c[0] for c in chunk])
            cents = np.stack([c[1] for c in chunk])
            phi = basis_values(x_tr, cents, precs)
            return _recombine_batch(f_tr, phi, t_tr, mode, mass=mass)

        parts = parallel_map(score, chunked(candidates, size), self.workers)
        a = np.concatenate([p[0] for p in parts])
        b = np.concatenate([p[1] for p in parts])
        sse = np.concatenate([p[2] for p in parts])
        best = int(np.argmin(sse))
        precision, center = candidates[best]
        phi = basis_values(x_tr, center[None, :], precision[None, :, :])[:, 0]
        return precision, center, float(a[best]), float(b[best]), phi

    def _refine(
        self,
        precision: np.ndarray,
        center: np.ndarray,
        a: float,
        b: float,
        phi: np.ndarray,
        x_tr: np.ndarray,
        f_tr: np.ndarray,
        t_tr: np.ndarray,
        mass: float,
        scale: float,
    ) -> tuple[np.ndarray, np.ndarray, float, float, np.ndarray]:
        """
        패턴 탐색 국소 개선 (개선될 때만 이동)

        중심 좌표 ±h 와 정밀도 배율 e^{±s} 를 시도하고, 개선이 없으면 보폭을 절반으로 줄입니다.
        """
        d = center.shape[0]
        mode = self.cfg.rga_mode
        best_sse = float(np.sum((t_tr - a * f_tr - b * phi) ** 2))
        width = 1.0 / np.sqrt(np.maximum(np.diag(precision), np.finfo(float).tiny))
        h = 0.5 * width
        s = 0.5
        for _ in range(self.cfg.refine_iters):
            moves_c, moves_p = [], []
            for i in range(d):
                for sign in (1.0, -1.0):
                    moved = center.copy()
                    moved[i] += sign * h[i]
                    moves_c.append(moved)
                    moves_p.append(precision)
            for sign in (1.0, -1.0):
                moves_c.append(center)
                moves_p.append(clamp_precision(precision * np.exp(sign * s), scale))
            cents, precs = np.stack(moves_c), np.stack(moves_p)
            phis = basis_values(x_tr, cents, precs)
            ma, mb, msse = _recombine_batch(f_tr, phis, t_tr, mode, mass=mass)
            j = int(np.argmin(msse))
            # 재계산한 SSE 로 비교해 부동소수 상쇄 오차를 피함
            trial = float(np.sum((t_tr - ma[j] * f_tr - mb[j] * phis[:, j]) ** 2))
            if trial < best_sse:
                center, precision = cents[j].copy(), precs[j].copy()
                a, b, phi, best_sse = float(ma[j]), float(mb[j]), phis[:, j].copy(), trial
            else:
                h = 0.5 * h
                s = 0.5 * s
        return precision, center, a, b, phi


def fit_rga(
    xs: np.ndarray,
    ys: np.ndarray,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    cfg: Optional[FitConfig] = None,
    workers: int = 1,
) -> tuple[GaussianMixture, FitReport]:
    """GreedyFitter(cfg).fit 의 함수형 진입점"""
    return GreedyFitter(cfg or FitConfig(), workers).fit(xs, ys, train_idx, val_idx)


def fit_surface(
    xs: np.ndarray,
    ys: np.ndarray,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    cfg: Optional[FitConfig] = None,
    workers: int = 1,
) -> tuple[Surface, FitReport]:
    """GreedyFitter(cfg).fit_surface 의 함수형 진입점"""
    return GreedyFitter(cfg or FitConfig(), workers).fit_surface(xs, ys, train_idx, val_idx)


# ---------------------------------------------------------------------------
# 수렴률 점검
# ---------------------------------------------------------------------------
def rate_bound(coef_mass: float, n: int, alpha: float, epsilon: float = 0.0) -> float:
    """
    정리의 상한 max(((K+1)/α)²/n, ε²/(1-α)²)

    Raises:
        DomainError: α 가 (0, 1) 밖이거나 n < 1
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha 는 (0, 1) 안에 있어야 합니다: {alpha}")
    if n < 1:
        raise DomainError(f"n 은 1 이상이어야 합니다: {n}")
    return max(((coef_mass + 1.0) / alpha) ** 2 / n, epsilon**2 / (1.0 - alpha) ** 2)


def zero_eps_bound(coef_mass: float, n: int) -> float:
    """ε = 0 일 때의 상한 (K+1)²/n"""
    return (coef_mass + 1.0) ** 2 / n


def eps_bound(coef_mass: float, n: int, epsilon: float) -> float:
    """ε > 0 일 때의 상한 ε² + 2(K+1)ε/√n + (K+1)²/n"""
    k1 = coef_mass + 1.0
    return epsilon**2 + 2.0 * k1 * epsilon / np.sqrt(n) + k1**2 / n


def _perturbed_dictionary(target: GaussianMixture, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """목표 항을 포함하지 않는 사전: 중심을 폭의 절반만큼 무작위로 이동"""
    rng = substream(seed, StreamTag.RATE, 1)
    widths = 1.0 / np.sqrt(np.einsum("kii->ki", target.precisions))
    shift = 0.5 * widths * rng.choice([-1.0, 1.0], size=target.centers.shape)
    return target.centers + shift, target.precisions.copy()


def theorem_rate_check(
    target: GaussianMixture,
    max_terms: int = 100,
    alpha: float = 0.5,
    exact_dictionary: bool = True,
    epsilon: float = 0.0,
    seed: int = 0,
) -> RateCheckResult:
    """
    합성 목표에 대해 볼록 재결합 RGA 를 L2 에서 정확히 실행하고 ε_n² 을 상한과 비교

    사전은 목표의 항들(exact_dictionary=True) 또는 중심을 옮긴 항들이며,
    모든 내적은 가우시안 곱 적분으로 계산합니다. K = Σ|a_i| 를 convex 수준으로 사용합니다.

    Args:
        target: 목표 혼합
        max_terms: 반복 횟수 n_max
        alpha: 정리의 α ∈ (0, 1)
        exact_dictionary: 사전이 목표 항을 포함하는지 (가설 충족 여부)
        epsilon: 목표와 사전 볼록 껍질 사이 거리 (eps_bound 열에 사용)
        seed: 사전 교란 시드

    Returns:
        RateCheckResult: n 별 ε_n², 상한, 충족 여부
    """
    if target.n_terms == 0:
        raise DomainError("목표 혼합에 항이 없습니다.")
    if max_terms < 1:
        raise DomainError(f"max_terms 는 1 이상이어야 합니다: {max_terms}")
    coef_mass = target.coef_mass
    if exact_dictionary:
        dict_c, dict_p = target.centers, target.precisions
    else:
        dict_c, dict_p = _perturbed_dictionary(target, seed)

    # [사전; 목표] 전체 그람 행렬의 제곱근으로 L2 내적을 유클리드 내적으로 옮김
    all_c = np.concatenate([dict_c, target.centers])
    all_p = np.concatenate([dict_p, target.precisions])
    gram = gaussian_gram(all_c, all_p, all_c, all_p)
    gram = 0.5 * (gram + gram.T)
    eig, vec = np.linalg.eigh(gram)
    root = (vec * np.sqrt(np.clip(eig, 0.0, None))) @ vec.T

    k_dict = dict_c.shape[0]
    atoms = root[:, :k_dict]
    y = root[:, k_dict:] @ target.weights
    f = np.zeros_like(y)

    rows: list[RateRow] = []
    for n in range(1, max_terms + 1):
        a, b, _ = _recombine_batch(f, atoms, y, RgaMode.CONVEX, level=coef_mass)
        j = int(np.argmin(np.maximum(np.sum((y[:, None] - a * f[:, None] - b * atoms) ** 2, axis=0), 0.0)))
        f = a[j] * f + b[j] * atoms[:, j]
        eps_sq = float(np.sum((f - y) ** 2))
        bound = rate_bound(coef_mass, n, alpha, epsilon)
        cor2 = eps_bound(coef_mass, n, epsilon) if epsilon > 0 else None
        holds = eps_sq <= bound * (1.0 + 1e-9) + 1e-15
        rows.append(
            RateRow(
                n=n,
                eps_sq=eps_sq,
                bound=bound,
                zero_eps_bound=zero_eps_bound(coef_mass, n),
                eps_bound=cor2,
                holds=holds,
            )
        )

    result = RateCheckResult(
        d=target.d,
        n_target_terms=target.n_terms,
        coef_mass=coef_mass,
        alpha=alpha,
        epsilon=epsilon,
        hypothesis_met=exact_dictionary,
        rows=rows,
    )
    if not result.all_hold:
        logger.warning(f"수렴률 상한 위반: d={target.d}, K={coef_mass:.4g}, 가설 충족={exact_dictionary}")
    return result


# ---------------------------------------------------------------------------
# 직렬화
# ---------------------------------------------------------------------------
MIXTURE_HEADER = "# gaussian-mixture"


def dump_mixture(mixture: GaussianMixture, path: str | Path, offset: float = 0.0) -> Path:
    """
    혼합을 텍스트 파일로 저장

    첫 줄: "# gaussian-mixture d=<d> terms=<k> offset=<c>"
    이후 항마다 한 줄: 계수, 중심 d 개, 정밀도 행 우선 d² 개 (repr 로 왕복 가능한 실수)
    """
    path = Path(path)
    lines = [f"{MIXTURE_HEADER} d={mixture.d} terms={mixture.n_terms} offset={float(offset)!r}"]
    for term in mixture.terms:
        values = [term.weight, *map(float, term.center), *map(float, term.precision.ravel())]
        lines.append(" ".join(repr(v) for v in values))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_mixture(path: str | Path) -> tuple[GaussianMixture, float]:
    """
    dump_mixture 로 저장한 파일 읽기

    Returns:
        (GaussianMixture, offset)

    Raises:
        DomainError: 형식이 맞지 않는 경우
    """
    path = Path(path)
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines or not lines[0].startswith(MIXTURE_HEADER):
        raise DomainError(f"혼합 파일 머리말이 없습니다: {path}")
    fields = dict(token.split("=", 1) for token in lines[0][len(MIXTURE_HEADER) :].split())
    try:
        d, k, offset = int(fields["d"]), int(fields["terms"]), float(fields["offset"])
    except (KeyError, ValueError) as e:
        raise DomainError(f"혼합 파일 머리말 형식 오류: {lines[0]}") from e
    if len(lines) - 1 != k:
        raise DomainError(f"항 개수 불일치: 머리말 {k}, 본문 {len(lines) - 1}")
    if k == 0:
        return GaussianMixture.empty(d), offset
    rows = np.array([[float(v) for v in line.split()] for line in lines[1:]])
    if rows.shape[1] != 1 + d + d * d:
        raise DomainError(f"항 한 줄에는 {1 + d + d * d} 개의 값이 있어야 합니다.")
    try:
        terms = [
            GaussianTerm(weight=float(row[0]), center=row[1 : 1 + d].copy(), precision=row[1 + d :].reshape(d, d).copy())
            for row in rows
        ]
    except (ValueError, np.linalg.LinAlgError) as e:
        raise DomainError(f"혼합 파일의 항이 올바르지 않습니다: {path}") from e
    return GaussianMixture.from_terms(d, terms), offset
