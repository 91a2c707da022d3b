"""Training the conditional denoiser with the clean-latent objective.

The network sees a noised latent sequence, the diffusion step, and the
item's conditioning tokens, and learns to predict the clean sequence;
10% of items have their conditioning masked to the null sequence so the
unconditional branch needed by guidance gets trained too. Gradients are
hand-written reverse mode; the finite-difference check below is the gate
that keeps them honest.
"""

from _world import ensure_world

from ghostquery.denoiser import ModelDims, grad_check, init_model
from ghostquery.numerics import SeededRng

print("gradient gate on tiny instances of both architectures:")
for arch in ("seqattn", "pooledmlp"):
    tiny = init_model(arch, ModelDims(4, 4, 8), seed=1)
    rep = grad_check(tiny, 1e-4, SeededRng(0, 1))
    print(f"  {arch:10s} max rel err {rep.max_rel_err:.2e} "
          f"(worst segment {rep.worst_segment}) -> {'ok' if rep.passed else 'BROKEN'}")

corpus, model, sched = ensure_world()
print(f"\ndesk model: {model.arch}, {model.param_count} parameters, "
      f"objective {model.objective}")
print(f"schedule: N={sched.N}, alpha_bar from {sched.alpha_bar[0]:.4f} "
      f"to {sched.alpha_bar[-1]:.4f}")
