"""Negative prompting: steer generation away from an unwanted attribute.

Each denoising step combines two predictions,
(1+w) * G(z, conditioned-on-what-you-want) - w * G(z, conditioned-on-what-
you-don't), so the trajectory moves toward the positive prompt and away
from the negative one. The study below conditions on a genre, negates one
instrument, and counts how often that instrument still shows up in the
top-10 -- compared against simply shifting the query vector along text or
audio directions, which suppresses the attribute but pushes the query off
the corpus distribution (larger Frechet distance).
"""

from _world import ensure_world

from ghostquery import experiments as ex
from ghostquery import retrieval as rt

corpus, model, sched = ensure_world()
index = rt.build_index(corpus)

study = ex.negative_prompting_study(model, corpus, index, sched, n_pairs=32)
print(f"over {study.n_pairs} (genre, negated-instrument) pairs:")
print(f"  top-10 share free of the negated instrument: "
      f"plain {study.frac_other_plain:.3f} -> negative prompting {study.frac_other_np:.3f}")
print(f"  Frechet distance to the corpus: plain {study.fd_plain:.2f}, "
      f"negative prompting {study.fd_np:.2f} (stays in distribution)")
print("  interpolation baselines at matched suppression:")
for name, b in study.baselines.items():
    print(f"    {name:5s} shift w={b['w']:<4} suppression {b['frac_other']:.3f} "
          f"FD {b['fd']:.2f}  <- off-distribution")
