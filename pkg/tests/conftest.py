"""Shared fixtures: corpora and trained models reused across the suite.

Training the desk-scale model takes ~2 minutes, so it happens once per
session; the tiny world (small corpus, briefly trained checkpoint on disk)
backs the CLI and service tests where model quality does not matter.
"""

import time

import numpy as np
import pytest

from ghostquery import diffusion as df
from ghostquery import retrieval as rt
from ghostquery.denoiser import ModelDims, init_model, save_model
from ghostquery.latentdata import SynthSpec, gen_corpus, save_corpus

DESK_SEED = 11


@pytest.fixture(scope="session")
def sched():
    return df.build_schedule()


@pytest.fixture(scope="session")
def default_corpus():
    return gen_corpus(SynthSpec())


@pytest.fixture(scope="session")
def desk_model(default_corpus, sched):
    """(model, report, train_seconds) for the default synthetic corpus."""
    model0 = init_model(
        "seqattn", ModelDims(default_corpus.d_a, default_corpus.d_t, 64), seed=5
    )
    start = time.monotonic()
    model, report = df.train(model0, default_corpus, sched, df.TrainConfig(seed=DESK_SEED))
    return model, report, time.monotonic() - start


@pytest.fixture(scope="session")
def desk_index(default_corpus):
    return rt.build_index(default_corpus)


@pytest.fixture(scope="session")
def regression_model(default_corpus, sched):
    """Deterministic-generator baseline (regression objective, short run)."""
    model0 = init_model(
        "seqattn", ModelDims(default_corpus.d_a, default_corpus.d_t, 64), seed=6
    )
    cfg = df.TrainConfig(objective="regression", steps=300, warmup_steps=30, seed=21)
    model, _ = df.train(model0, default_corpus, sched, cfg)
    return model


@pytest.fixture(scope="session")
def tiny_world(tmp_path_factory):
    """Small corpus + quickly trained checkpoint saved to disk.

    Returns a dict with paths and in-memory objects for CLI/service tests.
    """
    root = tmp_path_factory.mktemp("tiny_world")
    spec = SynthSpec(
        n_genres=2, n_instruments=2, d_a=8, d_t=6, T=6, items_per_cell=8, seed=3
    )
    corpus = gen_corpus(spec)
    corpus_path = root / "tiny.gdrl"
    save_corpus(corpus, corpus_path)
    sched = df.build_schedule()
    model0 = init_model("seqattn", ModelDims(corpus.d_a, corpus.d_t, 24), seed=2)
    cfg = df.TrainConfig(steps=250, warmup_steps=25, batch=32, seed=9, eval_every=100)
    model, _ = df.train(model0, corpus, sched, cfg)
    model_path = root / "tiny.gdrm"
    save_model(model, model_path)
    return {
        "root": root,
        "corpus": corpus,
        "corpus_path": corpus_path,
        "model": model,
        "model_path": model_path,
        "sched": sched,
    }


def constant_model(d_a=6, d_t=4, hidden=8, constant=None):
    """SeqAttn whose output is a fixed vector regardless of inputs."""
    model = init_model("seqattn", ModelDims(d_a, d_t, hidden), seed=0)
    model.params[:] = 0.0
    if constant is None:
        constant = np.linspace(-1.0, 1.0, d_a)
    model.views()["b_out"][...] = constant
    return model, np.asarray(constant, dtype=np.float64)
