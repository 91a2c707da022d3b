"""Command-line entry point for reproducible corpus/train/query/eval runs.

Every command that writes outputs drops a ``*.config.json`` snapshot of its
resolved parameters next to them; re-running with ``--config <snapshot>``
reproduces the outputs byte for byte (wall-clock timing is kept out of the
deterministic files and lands in ``run_meta.json`` instead). Machine-readable
JSON goes to stdout or ``-o``; human tables only appear under ``--pretty``.
The ``GDR_SEED`` environment variable overrides the default seed; an
explicit ``--seed`` wins over both.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import alignmetrics as am
from . import denoiser as dn
from . import diffusion as df
from . import experiments as ex
from . import retrieval as rt
from .errors import GhostQueryError
from .latentdata import (
    CondSeq,
    SynthSpec,
    cond_for,
    gen_corpus,
    load_corpus,
    pool,
    aggregate,
    save_corpus,
)

PROG = "ghostquery"


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("GDR_SEED")
    return int(env) if env else 0


def _dump_json(obj, path=None, pretty=False) -> None:
    if pretty:
        text = json.dumps(obj, indent=2, sort_keys=True)
    else:
        text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _snapshot(command: str, params: dict, anchor: Path) -> None:
    """Write the resolved-parameter snapshot beside the command's outputs."""
    snap = {"command": command, "params": params}
    if anchor.suffix:
        target = anchor.with_suffix(anchor.suffix + ".config.json")
    else:
        anchor.mkdir(parents=True, exist_ok=True)
        target = anchor / "config.json"
    target.write_text(json.dumps(snap, indent=2, sort_keys=True) + "\n")


def _params(args, skip=("config", "func", "pretty")) -> dict:
    return {k: v for k, v in vars(args).items() if k not in skip}


def _parse_cond(corpus, text: str) -> CondSeq:
    genre = instrument = None
    for token in text.split(","):
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


def _load_cond(corpus, args, attr_flag: str, file_flag: str) -> CondSeq | None:
    text = getattr(args, attr_flag, None)
    path = getattr(args, file_flag, None)
    if text and path:
        raise GhostQueryError(f"--{attr_flag} and --{file_flag} are mutually exclusive")
    if text:
        return _parse_cond(corpus, text)
    if path:
        data = json.loads(Path(path).read_text())
        return CondSeq(np.asarray(data["tokens"], dtype=np.float64))
    return None


def _build_schedule(args) -> df.NoiseSchedule:
    return df.build_schedule(args.sched_steps, args.beta_start, args.beta_end)


def _load_model_checked(path: str, sched: df.NoiseSchedule) -> dn.DenoiserModel:
    model = dn.load_model(path)
    recorded = model.meta.get("schedule_hash", "")
    if recorded and recorded != sched.digest():
        raise GhostQueryError(
            f"checkpoint was trained with schedule {recorded}, current flags build "
            f"{sched.digest()}; pass matching --sched-steps/--beta-start/--beta-end"
        )
    return model


def _add_sched_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sched-steps", type=int, default=df.DEFAULT_N)
    p.add_argument("--beta-start", type=float, default=df.DEFAULT_BETA[0])
    p.add_argument("--beta-end", type=float, default=df.DEFAULT_BETA[1])


def cmd_gen_corpus(args) -> int:
    grid = args.grid.lower().split("x")
    if len(grid) != 2:
        raise GhostQueryError(f"--grid must look like 4x4, got {args.grid!r}")
    spec = SynthSpec(
        n_genres=int(grid[0]),
        n_instruments=int(grid[1]),
        d_a=args.da,
        d_t=args.dt,
        T=args.frames,
        items_per_cell=args.items,
        centroid_scale=args.centroid_scale,
        noise_scale=args.noise_scale,
        seed=_resolve_seed(args.seed),
    )
    corpus = gen_corpus(spec)
    out = Path(args.output)
    save_corpus(corpus, out)
    sidecar = {it.id: it.labels for it in corpus.items}
    out.with_suffix(out.suffix + ".labels.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )
    params = _params(args)
    params["seed"] = spec.seed
    _snapshot("gen-corpus", params, out)
    print(f"wrote {out} ({len(corpus.items)} items)", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    sched = _build_schedule(args)
    seed = _resolve_seed(args.seed)
    preset = df.TrainConfig.paper if args.preset == "paper" else df.TrainConfig.desk
    overrides = dict(objective=args.objective, cond_mask_prob=args.cond_mask_prob, seed=seed)
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.batch is not None:
        overrides["batch"] = args.batch
    if args.lr_peak is not None:
        overrides["lr_peak"] = args.lr_peak
    if args.warmup is not None:
        overrides["warmup_steps"] = args.warmup
    if args.weight_decay is not None:
        overrides["weight_decay"] = args.weight_decay
    cfg = preset(**overrides)
    dims = dn.ModelDims(corpus.d_a, corpus.d_t, args.hidden, args.d_tau)
    model0 = dn.init_model(args.arch, dims, seed)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    log_path = outdir / "train_log.jsonl"
    with open(log_path, "w") as log:
        model, report = df.train(
            model0,
            corpus,
            sched,
            cfg,
            log_sink=lambda e: log.write(json.dumps(e, sort_keys=True) + "\n"),
        )
    dn.save_model(model, outdir / "model.gdrm")
    _dump_json(
        {
            "curve": report.curve,
            "final_val_loss": report.final_val_loss,
            "early_stop_step": report.early_stop_step,
        },
        outdir / "report.json",
    )
    _dump_json({"wall_time_s": report.wall_time_s}, outdir / "run_meta.json")
    params = _params(args)
    params["seed"] = seed
    _snapshot("train", params, outdir)
    losses = report.train_losses()
    print(
        f"trained {args.arch} for {cfg.steps} steps: loss {losses[0]:.4f} -> {losses[-1]:.4f}",
        file=sys.stderr,
    )
    return 0


def cmd_query(args) -> int:
    corpus = load_corpus(args.corpus)
    sched = _build_schedule(args)
    model = _load_model_checked(args.model, sched)
    seed = _resolve_seed(args.seed)
    index = rt.build_index(corpus, args.split)
    positive = _load_cond(corpus, args, "cond", "cond_file")
    if positive is None:
        raise GhostQueryError("--cond or --cond-file is required")
    negative = _load_cond(corpus, args, "negative", "negative_file")
    guidance = df.GuidanceSpec(args.w, positive, negative)
    alignment = None
    if args.align:
        alignment = am.AlignmentTransform.from_dict(json.loads(Path(args.align).read_text()))

    if args.invert_from:
        if args.invert_steps is None:
            args.invert_steps = 20
        data = json.loads(Path(args.invert_from).read_text())
        latents = [np.asarray(fr, dtype=np.float64) for fr in data["latents"]]
        edited = [
            df.edit(model, z, guidance, args.invert_steps, sched, cond_original=None)
            for z in latents
        ]
        before = aggregate(latents)
        vec = aggregate(edited)
        if alignment is not None:
            vec = alignment.apply_vector(vec)
        result = rt.topk(
            index,
            vec,
            args.k,
            provenance={
                "w": args.w,
                "seed": seed,
                "invert_steps": args.invert_steps,
                "retention": am.clap_score(vec, before),
            },
        )
        kept = edited
    else:
        if args.invert_steps is not None:
            raise GhostQueryError("--invert-steps requires --invert-from")
        result = rt.ghost_query(model, guidance, args.nq, sched, seed, index, args.k, alignment)
        kept = df.sample(model, guidance, args.nq, sched, seed, index.default_T)

    if args.save_latents:
        Path(args.save_latents).write_text(
            json.dumps({"latents": [z.tolist() for z in kept]}, sort_keys=True) + "\n"
        )
    out = result.to_json()
    if args.output:
        Path(args.output).write_text(out + "\n")
        params = _params(args)
        params["seed"] = seed
        _snapshot("query", params, Path(args.output))
    else:
        print(out)
    if args.pretty:
        for e in result.entries:
            print(f"{e['rank']:>3}  {e['score']:+.4f}  {e['id']}  {e['labels']}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus)
    sched = _build_schedule(args)
    model = _load_model_checked(args.model, sched)
    seed = _resolve_seed(args.seed)
    index = rt.build_index(corpus, args.index_split)
    ks = tuple(int(k) for k in args.ks.split(","))
    prompts = ex.held_out_prompts(corpus, args.split)
    if not prompts:
        raise GhostQueryError(f"split {args.split!r} has no items")

    alignment = None
    fd_block = None
    from .numerics import fit_moments  # local to keep module import light

    sample_pools = []
    clusters = []
    for j, (cond, _) in enumerate(prompts):
        qs = df.sample(
            model, df.GuidanceSpec(args.w, cond), args.cluster_nq, sched,
            seed + 7000 + j, index.default_T,
        )
        clusters.append(np.vstack([pool(q) for q in qs]))
        sample_pools.append(clusters[-1][: args.nq])
    sample_pools = np.vstack(sample_pools)
    corpus_pooled = np.vstack([pool(it.audio) for it in corpus.items])
    fd_raw = am.frechet(fit_moments(sample_pools), fit_moments(corpus_pooled))
    if args.align:
        alignment = am.fit_alignment(sample_pools, corpus_pooled)
        fd_aligned = am.frechet(
            fit_moments(am.apply_alignment(alignment, sample_pools)),
            fit_moments(corpus_pooled),
        )
        fd_block = {"raw": fd_raw, "aligned": fd_aligned}
    else:
        fd_block = {"raw": fd_raw}

    metrics = ex.paired_item_eval(
        model, corpus, index, sched, split=args.split, n_q=args.nq, w=args.w,
        ks=ks, seed=seed, alignment=alignment,
    )
    cells = [c for _, c in prompts]
    cell_r = ex.cell_recall(
        model, index, sched, prompts, n_q=args.nq, w=args.w, k=args.cell_k,
        seed=seed, alignment=alignment,
    )
    chance = ex.chance_cell_recall(index, cells, k=args.cell_k, seed=seed)
    diversity = am.diversity_report(clusters)
    payload = {
        "config": {
            "model": args.model,
            "corpus": args.corpus,
            "split": args.split,
            "n_q": args.nq,
            "cluster_nq": args.cluster_nq,
            "w": args.w,
            "seed": seed,
            "ks": list(ks),
            "aligned": bool(args.align),
            "schedule_hash": sched.digest(),
        },
        "retrieval": {"recall_at": metrics.recall_at, "median_rank_pct": metrics.median_rank_pct},
        "cell_recall": {"k": args.cell_k, "value": cell_r, "chance": chance},
        "frechet": fd_block,
        "diversity": diversity.to_dict(),
    }
    _dump_json(payload, args.output, pretty=False)
    if args.output:
        params = _params(args)
        params["seed"] = seed
        _snapshot("eval", params, Path(args.output))
    if args.pretty:
        for k in ks:
            print(f"R@{k}: {metrics.recall_at[k]:.3f}", file=sys.stderr)
        print(f"MedR%: {metrics.median_rank_pct:.2f}", file=sys.stderr)
        print(f"cell R@{args.cell_k}: {cell_r:.3f} (chance {chance:.3f})", file=sys.stderr)
    return 0


def cmd_align(args) -> int:
    corpus = load_corpus(args.corpus)
    target = load_corpus(args.target) if args.target else corpus
    sched = _build_schedule(args)
    model = _load_model_checked(args.model, sched)
    seed = _resolve_seed(args.seed)
    prompts = ex.held_out_prompts(corpus, args.split)
    pools = []
    for j, (cond, _) in enumerate(prompts):
        qs = df.sample(
            model, df.GuidanceSpec(args.w, cond), args.nq, sched, seed + j, corpus.default_T
        )
        pools.extend(pool(q) for q in qs)
    src = np.vstack(pools)
    tgt = np.vstack([pool(it.audio) for it in target.items])
    transform = am.fit_alignment(src, tgt, ridge=args.ridge)
    out = Path(args.output)
    _dump_json(transform.to_dict(), out)
    params = _params(args)
    params["seed"] = seed
    _snapshot("align", params, out)
    print(f"wrote {out}", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    from .numerics import SeededRng

    archs = ["seqattn", "pooledmlp"] if args.arch == "both" else [args.arch]
    seed = _resolve_seed(args.seed)
    ok = True
    for arch in archs:
        model = dn.init_model(arch, dn.ModelDims(4, 4, 8), seed)
        report = dn.grad_check(model, args.tolerance, SeededRng(seed, 1))
        status = "pass" if report.passed else "FAIL"
        print(
            f"{arch}: max rel err {report.max_rel_err:.3e} "
            f"(worst segment {report.worst_segment}) -> {status}"
        )
        ok = ok and report.passed
    return 0 if ok else 1


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServerConfig, create_app

    sched = _build_schedule(args)
    config = ServerConfig(
        model_path=args.model,
        corpus_path=args.corpus,
        session_cap=args.session_cap,
        sched=sched,
    )
    uvicorn.run(create_app(config), host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus file")
    p.add_argument("--grid", default="4x4")
    p.add_argument("--items", type=int, default=16)
    p.add_argument("--da", type=int, default=32)
    p.add_argument("--dt", type=int, default=16)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--centroid-scale", type=float, default=1.0)
    p.add_argument("--noise-scale", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a denoiser on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--arch", choices=dn.ARCHS, default="seqattn")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--d-tau", type=int, default=32)
    p.add_argument("--objective", choices=("sample", "epsilon", "regression"), default="sample")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr-peak", type=float, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--cond-mask-prob", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=None)
    _add_sched_flags(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("query", help="generate a latent query and rank the corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--cond", default=None, help="attribute values, e.g. g2,i1")
    p.add_argument("--cond-file", default=None, help="JSON file with raw tokens")
    p.add_argument("--negative", default=None)
    p.add_argument("--negative-file", default=None)
    p.add_argument("--nq", type=int, default=5)
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--align", default=None, help="alignment transform JSON")
    p.add_argument("--save-latents", default=None)
    p.add_argument("--invert-from", default=None, help="latents JSON to edit")
    p.add_argument("--invert-steps", type=int, default=None)
    _add_sched_flags(p)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="retrieval + diversity metrics over a prompt set")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--index-split", default=None)
    p.add_argument("--ks", default="1,5,10")
    p.add_argument("--cell-k", type=int, default=5)
    p.add_argument("--nq", type=int, default=5)
    p.add_argument("--cluster-nq", type=int, default=10)
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--align", action="store_true")
    _add_sched_flags(p)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("align", help="fit a moment-alignment transform")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--target", default=None, help="corpus to align to (default: --corpus)")
    p.add_argument("--split", default="test")
    p.add_argument("--nq", type=int, default=5)
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--ridge", type=float, default=am.DEFAULT_RIDGE)
    p.add_argument("--seed", type=int, default=None)
    _add_sched_flags(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("gradcheck", help="verify analytic gradients on tiny models")
    p.add_argument("--arch", choices=("seqattn", "pooledmlp", "both"), default="both")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("serve", help="run the interactive retrieval HTTP service")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--session-cap", type=int, default=64)
    _add_sched_flags(p)
    p.set_defaults(func=cmd_serve)

    for sp in sub.choices.values():
        sp.add_argument("--config", default=None, help="load parameters from a run snapshot")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    # two-pass parse: a snapshot supplies defaults, explicit flags override
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config:
        snap = json.loads(Path(known.config).read_text())
        if snap.get("command") != known.command:
            parser.error(
                f"snapshot is for command {snap.get('command')!r}, not {known.command!r}"
            )
        params = dict(snap.get("params", {}))
        for action in parser._actions:
            if isinstance(action, argparse._SubParsersAction):
                sub = action.choices.get(known.command)
                if sub is None:
                    break
                sub.set_defaults(**params)
                for sub_action in sub._actions:
                    if sub_action.required and sub_action.dest in params:
                        sub_action.required = False
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GhostQueryError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{PROG}: file error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
