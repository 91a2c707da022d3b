"""Shared demo artifacts: a synthetic corpus and a trained checkpoint.

The first demo run trains the desk-scale model (~2 minutes CPU) and caches
both artifacts under ``demos/_artifacts/``; later runs load from disk.
"""

from pathlib import Path

from ghostquery import diffusion as df
from ghostquery.denoiser import ModelDims, init_model, load_model, save_model
from ghostquery.latentdata import SynthSpec, gen_corpus, load_corpus, save_corpus

ARTIFACTS = Path(__file__).parent / "_artifacts"
CORPUS_PATH = ARTIFACTS / "demo.gdrl"
MODEL_PATH = ARTIFACTS / "demo.gdrm"


def ensure_world():
    """Return (corpus, model, schedule), training and caching on first use."""
    ARTIFACTS.mkdir(exist_ok=True)
    sched = df.build_schedule()
    if CORPUS_PATH.exists() and MODEL_PATH.exists():
        return load_corpus(CORPUS_PATH), load_model(MODEL_PATH), sched
    print("building demo world (one-time): 4x4 grid corpus + 3000-step training run")
    corpus = gen_corpus(SynthSpec())
    save_corpus(corpus, CORPUS_PATH)
    model0 = init_model("seqattn", ModelDims(corpus.d_a, corpus.d_t, 64), seed=5)
    model, report = df.train(model0, corpus, sched, df.TrainConfig(seed=11))
    losses = report.train_losses()
    print(f"  trained: loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    save_model(model, MODEL_PATH)
    return corpus, model, sched
