"""The full extension recipe on the toy transformer, end to end.

Trains a small model at a 256-token native context until in-context
retrieval forms, measures needle retrieval across lengths the model has
never seen, then applies the recipe — scale the rotary table once (YaRN,
s=4) and continue training briefly on separator-packed data at 1024 — and
measures again. The base model scores near zero beyond its native context;
the extended model retrieves needles across the whole new window.

Retrieval emerges abruptly at an initialization-dependent step count, so
base training checks a formation gate at each epoch boundary past
--base-steps and keeps going (or restarts from a reseeded initialization)
until it passes. Expect 10-30 minutes on one CPU core with the defaults;
--stage-steps only shortens the post-extension phase.
"""

import argparse
import time

from longctx.toylab.ablate import ExperimentSpec, Stage, evaluate, run_stages, train_base
from longctx.toylab.niah import mean_accuracy

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--base-steps", type=int, default=3000)
parser.add_argument("--stage-steps", type=int, default=150)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()


def show(tag: str, result: dict) -> None:
    by_len = {k: round(v, 3) for k, v in sorted(result["by_length"].items(), key=lambda kv: int(kv[0]))}
    print(f"{tag:>9} accuracy by length: {by_len}")
    print(f"{tag:>9} mean on (256, 1024]: {mean_accuracy(result, (256, 1024)):.3f}")


spec = ExperimentSpec(
    base_steps=args.base_steps,
    stages=[Stage(context_length=1024, method="yarn", s=4.0,
                  separator_mode="separator", steps=args.stage_steps)],
)

t0 = time.time()
print(f"training base model: {spec.base_steps} steps at context "
      f"{spec.model.context_length} (seed {args.seed})")
base = train_base(spec, args.seed)
print(f"  done in {time.time() - t0:.0f}s\n")
show("base", evaluate(spec, base, args.seed))

# One-step extension: rewrite the frequency table in place (weights are
# untouched), then continue training at the target length so the model
# adapts to the interpolated rotations.
t1 = time.time()
print(f"\nextending to 1024 (yarn, s=4) + {args.stage_steps} continued steps")
extended = run_stages(spec, base, args.seed)
print(f"  done in {time.time() - t1:.0f}s\n")
show("extended", evaluate(spec, extended, args.seed))
