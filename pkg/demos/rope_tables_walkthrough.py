"""Walk through the rotary frequency tables behind context extension.

Prints the base table for a small head dimension, then shows how position
interpolation, NTK-aware scaling, and YaRN each reshape it for a 4x longer
window, and what the attention-scale term does to logits.
"""

import numpy as np

from longctx import rope

spec = rope.RopeSpec(head_dim=8, base_theta=5.0e5, original_context=8192)

base = rope.base_frequencies(spec)
print("base frequencies (radians/position):")
print(" ", np.array2string(base.freqs, precision=6))
print("  rotations inside the 8192-token window:",
      np.round(rope.rotations_in_context(spec, base), 2))

s = 4.0
pi = rope.pi_frequencies(spec, s)
ntk = rope.ntk_frequencies(spec, s, mode="factor")
yarn = rope.yarn_frequencies(spec, s)

print(f"\nscaling to {int(s)}x the window (s = {s}):")
for name, table in [("pi", pi), ("ntk", ntk), ("yarn", yarn)]:
    ratio = table.freqs / base.freqs
    print(f"  {name:4s} freq ratio per dim:", np.array2string(ratio, precision=4),
          f" attention_scale={table.attention_scale:.4f}")

# YaRN interpolates: fast dimensions (many rotations) are untouched, slow
# ones are fully divided by s, the ramp blends in between.
print("\nYaRN keeps the ratio at 1 for fast dims and 1/s for slow dims;")
print("PI divides everything; NTK re-bases theta so the effect grows with depth.")

# The attention-scale term multiplies rotated q and k, so logits gain m^2.
m = rope.attention_scale_for(s)
q = np.array([1.0, 0.0, 0.5, 0.2, 0.0, 0.0, 0.3, 0.1])
unscaled = rope.FrequencyTable(freqs=yarn.freqs, attention_scale=1.0)
qr = rope.apply_rotary(q, 7, yarn)
plain = rope.apply_rotary(q, 7, unscaled)
print(f"\nattention scale m = 0.1*ln(s)+1 = {m:.6f}; logit gain m^2 = {m*m:.6f}")
print("  scaled q.k  :", float(qr @ qr))
print("  unscaled q.k:", float(plain @ plain))

# Mapping a huge context target back to a scale factor:
for target in (1_048_576, 2_097_152, 4_194_304):
    print(f"target {target:>9,} tokens over base 8192 -> s =",
          rope.scale_factor_for_target(target, 8192))
