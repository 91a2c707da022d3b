import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import constant_model
from ghostquery import diffusion as df
from ghostquery.denoiser import save_model
from ghostquery.latentdata import SynthSpec, gen_corpus, save_corpus
from ghostquery.service import ServerConfig, create_app, replay_history


@pytest.fixture(scope="module")
def served(tiny_world):
    config = ServerConfig(
        model_path=str(tiny_world["model_path"]),
        corpus_path=str(tiny_world["corpus_path"]),
        session_cap=8,
    )
    app = create_app(config)
    with TestClient(app) as client:
        yield client, app.state.engine


def open_session(client, seed=None):
    body = {"model": "tiny.gdrm", "corpus": "tiny.gdrl"}
    if seed is not None:
        body["seed"] = seed
    resp = client.post("/sessions", json=body)
    assert resp.status_code == 201
    return resp.json()["session_id"]


class TestSessionLifecycle:
    def test_health(self, served):
        client, _ = served
        body = client.get("/health").json()
        assert body["status"] == "ok"
        assert body["model"] == "tiny.gdrm"

    def test_create_gives_distinct_ids(self, served):
        client, _ = served
        assert open_session(client) != open_session(client)

    def test_unknown_artifacts_404(self, served):
        client, _ = served
        for body in (
            {"model": "other.gdrm", "corpus": "tiny.gdrl"},
            {"model": "tiny.gdrm", "corpus": "other.gdrl"},
        ):
            assert client.post("/sessions", json=body).status_code == 404

    def test_unknown_session_404(self, served):
        client, _ = served
        assert client.get("/sessions/doesnotexist").status_code == 404

    def test_lru_eviction_beyond_cap(self, tiny_world):
        config = ServerConfig(
            model_path=str(tiny_world["model_path"]),
            corpus_path=str(tiny_world["corpus_path"]),
            session_cap=2,
        )
        with TestClient(create_app(config)) as client:
            first = open_session(client)
            second = open_session(client)
            third = open_session(client)
            assert client.get(f"/sessions/{first}").status_code == 404
            assert client.get(f"/sessions/{second}").status_code == 200
            assert client.get(f"/sessions/{third}").status_code == 200

    def test_zero_cap_429(self, tiny_world):
        config = ServerConfig(
            model_path=str(tiny_world["model_path"]),
            corpus_path=str(tiny_world["corpus_path"]),
            session_cap=0,
        )
        with TestClient(create_app(config)) as client:
            resp = client.post("/sessions", json={"model": "tiny.gdrm", "corpus": "tiny.gdrl"})
            assert resp.status_code == 429

    def test_corpus_items_paged(self, served):
        client, _ = served
        page = client.get("/corpus/items", params={"offset": 0, "limit": 5}).json()
        assert page["total"] == 32
        assert len(page["items"]) == 5
        assert {"id", "labels", "split"} == set(page["items"][0])
        rest = client.get("/corpus/items", params={"offset": 30, "limit": 5}).json()
        assert len(rest["items"]) == 2


class TestQuery:
    def test_ranked_response(self, served):
        client, _ = served
        sid = open_session(client, seed=5)
        resp = client.post(f"/sessions/{sid}/query", json={"cond": "g1,i0", "k": 6})
        assert resp.status_code == 200
        body = resp.json()
        scores = [r["score"] for r in body["results"]]
        assert len(scores) == 6
        assert scores == sorted(scores, reverse=True)
        assert all("labels" in r for r in body["results"])

    def test_deterministic_per_seed(self, served):
        client, _ = served
        results = []
        for _ in range(2):
            sid = open_session(client, seed=42)
            results.append(client.post(f"/sessions/{sid}/query", json={"cond": "g0,i1"}).json())
        assert results[0] == results[1]

    def test_raw_cond_accepted(self, served):
        client, state = served
        sid = open_session(client, seed=1)
        tokens = state.corpus.items[0].cond.tokens.tolist()
        resp = client.post(f"/sessions/{sid}/query", json={"cond": {"tokens": tokens}})
        assert resp.status_code == 200

    @pytest.mark.parametrize(
        "body",
        [
            {"cond": "g0,i0", "n_q": 0},
            {"cond": "g0,i0", "k": 0},
            {"cond": "g0,i0", "w": -1.0},
            {"cond": "x9"},
            {"cond": "g99,i0"},
        ],
    )
    def test_invalid_bodies_422(self, served, body):
        client, _ = served
        sid = open_session(client)
        assert client.post(f"/sessions/{sid}/query", json=body).status_code == 422


class TestNegativeRefine:
    def test_null_negative_equals_requery(self, served):
        client, _ = served
        sid = open_session(client, seed=7)
        first = client.post(f"/sessions/{sid}/query", json={"cond": "g1,i1", "w": 1.5}).json()
        refined = client.post(f"/sessions/{sid}/refine/negative", json={"w": 1.5}).json()
        assert [r["id"] for r in refined["results"]] == [r["id"] for r in first["results"]]
        assert [r["score"] for r in refined["results"]] == [r["score"] for r in first["results"]]

    def test_negative_changes_ranking(self, served):
        client, _ = served
        sid = open_session(client, seed=8)
        first = client.post(f"/sessions/{sid}/query", json={"cond": "g1", "w": 2.0}).json()
        refined = client.post(
            f"/sessions/{sid}/refine/negative", json={"neg_cond": "i1", "w": 2.0}
        ).json()
        assert [r["id"] for r in refined["results"]] != [r["id"] for r in first["results"]]

    def test_requires_prior_query(self, served):
        client, _ = served
        sid = open_session(client)
        assert client.post(f"/sessions/{sid}/refine/negative", json={"w": 1.0}).status_code == 409

    def test_negative_w_rejected(self, served):
        client, _ = served
        sid = open_session(client, seed=9)
        client.post(f"/sessions/{sid}/query", json={"cond": "g0,i0"})
        resp = client.post(f"/sessions/{sid}/refine/negative", json={"w": -2.0})
        assert resp.status_code == 422


class TestInvertRefine:
    def test_retention_one_for_constant_model(self, tmp_path_factory, tiny_world):
        root = tmp_path_factory.mktemp("const_served")
        corpus = gen_corpus(SynthSpec(n_genres=2, n_instruments=2, d_a=6, d_t=6,
                                      T=4, items_per_cell=4, seed=1))
        corpus_path = root / "c.gdrl"
        save_corpus(corpus, corpus_path)
        model, _ = constant_model(d_a=6, d_t=6)
        model_path = root / "m.gdrm"
        save_model(model, model_path)
        config = ServerConfig(model_path=str(model_path), corpus_path=str(corpus_path))
        with TestClient(create_app(config)) as client:
            body = {"model": "m.gdrm", "corpus": "c.gdrl"}
            sid = client.post("/sessions", json=body).json()["session_id"]
            client.post(f"/sessions/{sid}/query", json={"cond": "g0,i0", "w": 0.0})
            resp = client.post(
                f"/sessions/{sid}/refine/invert",
                json={"new_cond": "g0,i0", "k_steps": 20, "w": 0.0},
            )
            assert resp.status_code == 200
            assert abs(resp.json()["retention"] - 1.0) <= 1e-6

    def test_invert_updates_results_and_history(self, served):
        client, _ = served
        sid = open_session(client, seed=10)
        client.post(f"/sessions/{sid}/query", json={"cond": "g0,i0"})
        resp = client.post(
            f"/sessions/{sid}/refine/invert", json={"new_cond": "g0,i1", "k_steps": 20}
        )
        assert resp.status_code == 200
        body = resp.json()
        assert -1.0 <= body["retention"] <= 1.0
        assert body["query"]["k_steps"] == 20
        snap = client.get(f"/sessions/{sid}").json()
        assert [h["type"] for h in snap["history"]] == ["query", "invert"]

    @pytest.mark.parametrize("k_steps", [0, 51])
    def test_depth_bounds_422(self, served, k_steps):
        client, _ = served
        sid = open_session(client, seed=11)
        client.post(f"/sessions/{sid}/query", json={"cond": "g0,i0"})
        resp = client.post(
            f"/sessions/{sid}/refine/invert", json={"new_cond": "g0,i1", "k_steps": k_steps}
        )
        assert resp.status_code == 422

    def test_requires_live_latents(self, served):
        client, _ = served
        sid = open_session(client)
        resp = client.post(
            f"/sessions/{sid}/refine/invert", json={"new_cond": "g0,i1", "k_steps": 10}
        )
        assert resp.status_code == 409


class TestSnapshotAndReplay:
    def test_history_grows_append_only(self, served):
        client, _ = served
        sid = open_session(client, seed=12)
        client.post(f"/sessions/{sid}/query", json={"cond": "g1,i1"})
        client.post(f"/sessions/{sid}/refine/negative", json={"neg_cond": "i0", "w": 1.0})
        client.post(f"/sessions/{sid}/refine/invert", json={"new_cond": "g0,i1", "k_steps": 10})
        client.post(f"/sessions/{sid}/refine/negative", json={"neg_cond": "i1", "w": 2.0})
        snap = client.get(f"/sessions/{sid}").json()
        assert len(snap["history"]) == 4
        assert snap["last_results"] is not None

    def test_replay_reproduces_results(self, served):
        client, state = served
        sid = open_session(client, seed=13)
        client.post(f"/sessions/{sid}/query", json={"cond": "g1,i0", "w": 1.0})
        client.post(f"/sessions/{sid}/refine/negative", json={"neg_cond": "i1", "w": 1.5})
        client.post(f"/sessions/{sid}/refine/invert", json={"new_cond": "g0,i0", "k_steps": 15})
        snap = client.get(f"/sessions/{sid}").json()
        replayed = replay_history(state, snap["history"])
        final_ids = [r["id"] for r in snap["last_results"]["results"]]
        final_scores = [r["score"] for r in snap["last_results"]["results"]]
        assert replayed.ids == final_ids
        assert [e["score"] for e in replayed.entries] == pytest.approx(final_scores, abs=0)

    def test_replay_matches_cli_query(self, served, tiny_world, tmp_path):
        import json as _json

        from ghostquery.cli import main

        client, _ = served
        sid = open_session(client, seed=14)
        response = client.post(f"/sessions/{sid}/query", json={"cond": "g1,i1", "k": 10}).json()
        recorded = client.get(f"/sessions/{sid}").json()["history"][0]
        out = tmp_path / "cli_replay.json"
        code = main([
            "query", "--model", str(tiny_world["model_path"]),
            "--corpus", str(tiny_world["corpus_path"]),
            "--cond", "g1,i1", "--nq", str(recorded["n_q"]), "--w", str(recorded["w"]),
            "--k", str(recorded["k"]), "--seed", str(recorded["seed"]), "-o", str(out),
        ])
        assert code == 0
        cli_ids = [r["id"] for r in _json.loads(out.read_text())["results"]]
        assert cli_ids == [r["id"] for r in response["results"]]
