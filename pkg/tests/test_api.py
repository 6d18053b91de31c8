"""
작업 API 테스트

헬스 체크, 작업 목록, 작업 실행과 에러 응답 형식을 테스트합니다.
"""

from fastapi.testclient import TestClient

from app.main import app

client = TestClient(app)

SMALL_RATE_CHECK = {"rate_check": {"n_targets": 1, "max_terms": 5, "dims": [1]}, "seed": 3}

TOY_PRICE = {
    "market": {"spots": [100.0, 100.0], "rate": 0.05, "vols": [0.2, 0.3], "correlation": [[1.0, 0.5], [0.5, 1.0]]},
    "payoff": {"kind": "min_put", "strike": 100.0, "style": "european"},
    "time": {"maturity": 1.0, "steps": 1},
    "grid": {"n_points": 128},
    "fit": {"max_terms": 8, "n_center_candidates": 4, "n_precision_scales": 3, "refine_iters": 2},
    "pricer": {"n_descendants": 32},
    "seed": 7,
}


class TestHealth:
    """기본 엔드포인트 테스트"""

    def test_health(self):
        """헬스 체크"""
        response = client.get("/health")

        assert response.status_code == 200
        assert response.json()["status"] == "healthy"

    def test_root(self):
        """루트 엔드포인트"""
        response = client.get("/")

        assert response.status_code == 200
        data = response.json()
        assert data["message"] == "Interpolative Lattice Pricer API"
        assert data["jobs"] == "/api/v1/jobs/"


class TestListJobs:
    """작업 목록 테스트"""

    def test_list_jobs(self):
        """네 가지 작업"""
        response = client.get("/api/v1/jobs/")

        assert response.status_code == 200
        assert response.json() == ["price", "bounds", "benchmark", "rate-check"]


class TestSubmitJob:
    """작업 실행 테스트"""

    def test_rate_check(self):
        """rate-check 실행 성공"""
        response = client.post("/api/v1/jobs/rate-check", json=SMALL_RATE_CHECK)

        assert response.status_code == 200
        data = response.json()
        assert data["job"] == "rate-check"
        assert data["exit_code"] == 0
        assert data["header"] == "# interpolative-lattice rate-check v1"
        assert len(data["rows"]) == 5

    def test_price(self):
        """price 실행 결과는 같은 설정의 CLI 결과와 같은 행"""
        first = client.post("/api/v1/jobs/price", json=TOY_PRICE)
        second = client.post("/api/v1/jobs/price", json=TOY_PRICE)

        assert first.status_code == 200
        assert first.json()["rows"] == second.json()["rows"]
        assert first.json()["columns"][5] == "value0"

    def test_path_job_overrides_body(self):
        """경로의 작업 종류가 본문의 job 을 덮어씀"""
        response = client.post("/api/v1/jobs/rate-check", json={**SMALL_RATE_CHECK, "job": "price"})

        assert response.status_code == 200
        assert response.json()["job"] == "rate-check"

    def test_invalid_correlation(self):
        """상관계수 범위 위반은 422 와 설정 경로 메시지"""
        body = {**TOY_PRICE, "market": {**TOY_PRICE["market"], "correlation": [[1.0, 1.2], [1.2, 1.0]]}}
        response = client.post("/api/v1/jobs/price", json=body)

        assert response.status_code == 422
        data = response.json()
        assert data["error"] == "CONFIG_ERROR"
        assert data["message"].startswith("market.correlation")

    def test_unknown_key(self):
        """알 수 없는 키는 422"""
        response = client.post("/api/v1/jobs/price", json={**TOY_PRICE, "grid": {"n_pointz": 10}})

        assert response.status_code == 422
        assert response.json()["message"].startswith("grid.n_pointz")

    def test_unknown_job(self):
        """없는 작업 종류는 422"""
        response = client.post("/api/v1/jobs/optimize", json={})

        assert response.status_code == 422
