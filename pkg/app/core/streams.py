"""
결정적 난수 서브스트림과 작업자 풀

경로, 후손 점, 내부 시뮬레이션마다 (seed, tag, *keys) 로 결정되는 Philox 스트림을 사용합니다.
작업자 수와 무관하게 같은 seed 면 같은 결과가 나오는 것이 이 모듈의 계약입니다.
"""

from concurrent.futures import ThreadPoolExecutor
from enum import IntEnum
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

# 경로 블록 크기 (상수여야 경로 i 의 스트림이 (seed, i) 에만 의존함)
BLOCK_PATHS = 4096


class StreamTag(IntEnum):
    """서브스트림 네임스페이스"""

    PATHS = 1
    DESCENDANTS = 2
    INNER = 3
    SPLIT = 4
    CANDIDATES = 5
    MC = 6
    LSMC = 7
    RATE = 8
    OUTER = 9


def substream(seed: int, tag: StreamTag, *keys: int) -> np.random.Generator:
    """
    카운터 기반 서브스트림 생성

    Args:
        seed: 사용자 시드
        tag: 용도 네임스페이스
        keys: 경로/시점/격자점 인덱스 등 추가 키

    Returns:
        np.random.Generator: Philox 기반 생성기
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(tag), *(int(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def path_blocks(n_paths: int, block: int = BLOCK_PATHS) -> list[tuple[int, int, int]]:
    """
    경로 인덱스를 고정 크기 블록으로 분할

    Returns:
        list[tuple[int, int, int]]: (블록 번호, 시작, 끝) 목록
    """
    return [(b, start, min(start + block, n_paths)) for b, start in enumerate(range(0, n_paths, block))]


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """
    입력 순서를 보존하는 병렬 map

    workers <= 1 이면 현재 스레드에서 순차 실행합니다.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def chunked(seq: Sequence[T], size: int) -> list[Sequence[T]]:
    """고정 크기 조각으로 분할"""
    return [seq[i : i + size] for i in range(0, len(seq), size)]
