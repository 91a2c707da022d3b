"""HTTP API for interactive retrieval sessions (query, inspect, refine).

A session owns the live generated query latents plus an append-only
history of every step's full parameters and seeds, so replaying the
history against the same model reproduces the session state exactly.
Negative refinement re-samples from the original noise seeds with the
negative branch swapped in (it is a sampling-time guidance change);
inversion refinement edits the current latents in place (it is a
trajectory operation). The model and index are immutable while serving;
per-session mutation is serialized by a lock, and the session table
evicts least-recently-used sessions beyond the configured cap.
"""

from __future__ import annotations

import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import alignmetrics as am
from . import denoiser as dn
from . import diffusion as df
from . import retrieval as rt
from .errors import GhostQueryError
from .latentdata import CondSeq, Corpus, aggregate, cond_for, load_corpus

DEFAULT_N_Q = 5
DEFAULT_K = 10


@dataclass
class ServerConfig:
    model_path: str
    corpus_path: str
    session_cap: int = 64
    sched: df.NoiseSchedule = field(default_factory=df.build_schedule)

    @property
    def model_name(self) -> str:
        return Path(self.model_path).name

    @property
    def corpus_name(self) -> str:
        return Path(self.corpus_path).name


@dataclass
class Session:
    id: str
    base_seed: int
    history: list = field(default_factory=list)
    current_latents: list = field(default_factory=list)
    last_results: Optional[rt.RankedResult] = None
    last_positive: Optional[CondSeq] = None
    created: float = field(default_factory=time.time)
    updated: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class ServerState:
    """Loaded artifacts plus the bounded session table."""

    def __init__(self, config: ServerConfig, model: dn.DenoiserModel, corpus: Corpus):
        self.config = config
        self.model = model
        self.corpus = corpus
        self.index = rt.build_index(corpus)
        self.sched = config.sched
        self.sessions: OrderedDict[str, Session] = OrderedDict()
        self.table_lock = threading.Lock()
        self.created_count = 0

    def create_session(self, seed: Optional[int]) -> Session:
        with self.table_lock:
            if self.config.session_cap < 1:
                raise HTTPException(429, "session table capacity is zero")
            if len(self.sessions) >= self.config.session_cap:
                self.sessions.popitem(last=False)  # evict least recently used
            sid = uuid.uuid4().hex[:16]
            session = Session(id=sid, base_seed=self.created_count * 1_000_003 if seed is None else seed)
            self.created_count += 1
            self.sessions[sid] = session
            return session

    def get_session(self, sid: str) -> Session:
        with self.table_lock:
            session = self.sessions.get(sid)
            if session is None:
                raise HTTPException(404, f"unknown session {sid!r}")
            self.sessions.move_to_end(sid)
            return session


class CreateSessionBody(BaseModel):
    corpus: str
    model: str
    seed: Optional[int] = None


class RawCond(BaseModel):
    tokens: list


class QueryBody(BaseModel):
    cond: Union[str, RawCond]
    w: float = 1.0
    n_q: int = DEFAULT_N_Q
    k: int = DEFAULT_K


class NegativeBody(BaseModel):
    neg_cond: Optional[Union[str, RawCond]] = None
    w: float = 1.0


class InvertBody(BaseModel):
    new_cond: Union[str, RawCond]
    k_steps: int = 20
    w: float = 1.0


def _parse_cond(corpus: Corpus, cond) -> CondSeq:
    try:
        if isinstance(cond, RawCond):
            return CondSeq(np.asarray(cond.tokens, dtype=np.float64))
        genre = instrument = None
        for token in str(cond).split(","):
            token = token.strip()
            if not token:
                continue
            if token.startswith("g"):
                genre = token
            elif token.startswith("i"):
                instrument = token
            else:
                raise GhostQueryError(f"cannot parse attribute value {token!r}")
        return cond_for(corpus, genre=genre, instrument=instrument)
    except (GhostQueryError, ValueError) as exc:
        raise HTTPException(422, f"malformed conditioning: {exc}") from exc


def _result_payload(result: rt.RankedResult) -> dict:
    return {"query": result.provenance, "results": result.entries}


def _cond_json(cond) -> object:
    if isinstance(cond, RawCond):
        return {"tokens": cond.tokens}
    return cond


def _run_query(state: ServerState, session: Session, positive: CondSeq,
               negative: Optional[CondSeq], w: float, n_q: int, k: int, seed: int) -> rt.RankedResult:
    guidance = df.GuidanceSpec(w, positive, negative)
    latents = df.sample(state.model, guidance, n_q, state.sched, seed, state.index.default_T)
    vec = aggregate(latents)
    result = rt.topk(
        state.index,
        vec,
        k,
        provenance={"w": w, "n_q": n_q, "seed": seed, "negative": negative is not None},
    )
    session.current_latents = latents
    session.last_results = result
    session.last_positive = positive
    session.updated = time.time()
    return result


def create_app(config: ServerConfig) -> FastAPI:
    model = dn.load_model(config.model_path)
    recorded = model.meta.get("schedule_hash", "")
    if recorded and recorded != config.sched.digest():
        raise GhostQueryError(
            f"checkpoint schedule {recorded} does not match server schedule "
            f"{config.sched.digest()}"
        )
    corpus = load_corpus(config.corpus_path)
    state = ServerState(config, model, corpus)
    app = FastAPI(title="ghostquery service")
    app.state.engine = state

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "model": config.model_name,
            "corpus": config.corpus_name,
            "sessions": len(state.sessions),
        }

    @app.get("/corpus/items")
    def corpus_items(offset: int = 0, limit: int = 50):
        items = state.corpus.items[offset : offset + max(0, limit)]
        return {
            "total": len(state.corpus.items),
            "offset": offset,
            "items": [{"id": it.id, "labels": it.labels, "split": it.split} for it in items],
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        if body.model != config.model_name:
            raise HTTPException(404, f"unknown model {body.model!r}")
        if body.corpus != config.corpus_name:
            raise HTTPException(404, f"unknown corpus {body.corpus!r}")
        session = state.create_session(body.seed)
        return {"session_id": session.id, "seed": session.base_seed}

    @app.post("/sessions/{sid}/query")
    def session_query(sid: str, body: QueryBody):
        session = state.get_session(sid)
        if body.n_q < 1:
            raise HTTPException(422, "n_q must be >= 1")
        if body.k < 1:
            raise HTTPException(422, "k must be >= 1")
        if body.w < 0:
            raise HTTPException(422, "guidance strength must be >= 0")
        positive = _parse_cond(state.corpus, body.cond)
        with session.lock:
            seed = session.base_seed + 1000 * len(session.history)
            result = _run_query(state, session, positive, None, body.w, body.n_q, body.k, seed)
            session.history.append(
                {
                    "type": "query",
                    "cond": _cond_json(body.cond),
                    "w": body.w,
                    "n_q": body.n_q,
                    "k": body.k,
                    "seed": seed,
                }
            )
        return _result_payload(result)

    @app.post("/sessions/{sid}/refine/negative")
    def refine_negative(sid: str, body: NegativeBody):
        session = state.get_session(sid)
        if body.w < 0:
            raise HTTPException(422, "guidance strength must be >= 0")
        with session.lock:
            last_query = next(
                (h for h in reversed(session.history) if h["type"] in ("query", "negative")),
                None,
            )
            if last_query is None or session.last_positive is None:
                raise HTTPException(409, "no prior query to refine")
            negative = (
                None if body.neg_cond is None else _parse_cond(state.corpus, body.neg_cond)
            )
            seed = last_query["seed"]  # same noise, new guidance
            result = _run_query(
                state, session, session.last_positive, negative, body.w,
                last_query["n_q"], last_query["k"], seed,
            )
            session.history.append(
                {
                    "type": "negative",
                    "neg_cond": _cond_json(body.neg_cond) if body.neg_cond is not None else None,
                    "w": body.w,
                    "n_q": last_query["n_q"],
                    "k": last_query["k"],
                    "seed": seed,
                }
            )
        return _result_payload(result)

    @app.post("/sessions/{sid}/refine/invert")
    def refine_invert(sid: str, body: InvertBody):
        session = state.get_session(sid)
        if not 1 <= body.k_steps <= state.sched.N:
            raise HTTPException(422, f"k_steps must lie in 1..{state.sched.N}")
        if body.w < 0:
            raise HTTPException(422, "guidance strength must be >= 0")
        with session.lock:
            if not session.current_latents:
                raise HTTPException(409, "no live latents; query first")
            new_cond = _parse_cond(state.corpus, body.new_cond)
            guidance = df.GuidanceSpec(body.w, new_cond)
            before = aggregate(session.current_latents)
            edited = [
                df.edit(
                    state.model, z, guidance, body.k_steps, state.sched,
                    cond_original=session.last_positive,
                )
                for z in session.current_latents
            ]
            after = aggregate(edited)
            retention = am.clap_score(after, before)
            k = next((h["k"] for h in reversed(session.history) if "k" in h), DEFAULT_K)
            result = rt.topk(
                state.index,
                after,
                k,
                provenance={"w": body.w, "k_steps": body.k_steps, "retention": retention},
            )
            session.current_latents = edited
            session.last_results = result
            session.last_positive = new_cond
            session.updated = time.time()
            session.history.append(
                {
                    "type": "invert",
                    "new_cond": _cond_json(body.new_cond),
                    "k_steps": body.k_steps,
                    "w": body.w,
                    "k": k,
                }
            )
        payload = _result_payload(result)
        payload["retention"] = retention
        return payload

    @app.get("/sessions/{sid}")
    def session_snapshot(sid: str):
        session = state.get_session(sid)
        with session.lock:
            return {
                "id": session.id,
                "seed": session.base_seed,
                "history": session.history,
                "last_results": None
                if session.last_results is None
                else _result_payload(session.last_results),
                "created": session.created,
                "updated": session.updated,
            }

    return app


def replay_history(state: ServerState, history) -> rt.RankedResult:
    """Re-execute a session history against the server's model.

    Used to assert the session-determinism invariant: the recorded seeds
    and parameters fully determine the final latents and ranking.
    """
    session = Session(id="replay", base_seed=0)
    result = None
    for step in history:
        if step["type"] == "query":
            positive = _parse_cond(state.corpus, _as_cond(step["cond"]))
            result = _run_query(
                state, session, positive, None, step["w"], step["n_q"], step["k"], step["seed"]
            )
        elif step["type"] == "negative":
            negative = (
                None if step["neg_cond"] is None else _parse_cond(state.corpus, _as_cond(step["neg_cond"]))
            )
            result = _run_query(
                state, session, session.last_positive, negative, step["w"],
                step["n_q"], step["k"], step["seed"],
            )
        elif step["type"] == "invert":
            new_cond = _parse_cond(state.corpus, _as_cond(step["new_cond"]))
            guidance = df.GuidanceSpec(step["w"], new_cond)
            edited = [
                df.edit(
                    state.model, z, guidance, step["k_steps"], state.sched,
                    cond_original=session.last_positive,
                )
                for z in session.current_latents
            ]
            session.current_latents = edited
            session.last_positive = new_cond
            result = rt.topk(state.index, aggregate(edited), step["k"])
            session.last_results = result
        else:  # pragma: no cover - history entries are produced by this module
            raise ValueError(f"unknown history step type {step['type']!r}")
    return result


def _as_cond(stored) -> object:
    if isinstance(stored, dict) and "tokens" in stored:
        return RawCond(tokens=stored["tokens"])
    return stored
