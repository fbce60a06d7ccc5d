"""Generate a synthetic scene and look at how corruption degrades it.

Writes the ground truth, the rendered image, and one corrupted member's
argmax decode to demos/output/01/ so the pieces can be inspected.
"""

from pathlib import Path

import numpy as np

from segpost import (
    SceneSpec,
    argmax_labels,
    corrupt_to_probs_logged,
    generate_scene,
    write_labelmap_png,
    write_rgb_png,
)

out = Path(__file__).parent / "output" / "01"
out.mkdir(parents=True, exist_ok=True)

spec = SceneSpec(
    height=128, width=128, num_classes=6, num_seeds=18,
    noise_flip_rate=0.1, flip_confidence=0.9, speckle_rate=0.02,
    rng_seed=2024,
)
gt, image = generate_scene(spec)
print(f"scene: {spec.height}x{spec.width}, {spec.num_classes} classes, "
      f"{spec.num_seeds} Voronoi seeds")
print(f"classes present: {sorted(int(v) for v in np.unique(gt.data))}")

probs, log = corrupt_to_probs_logged(gt, spec)
decoded = argmax_labels(probs)
disagree = float((decoded.data != gt.data).mean())
print(f"flip mask rate:    {log.flip_mask.mean():.4f} (target {spec.noise_flip_rate})")
print(f"speckle mask rate: {log.speckle_mask.mean():.4f} (target {spec.speckle_rate})")
print(f"argmax disagreement with ground truth: {disagree:.4f}")

write_labelmap_png(gt, out / "ground_truth.png")
write_rgb_png(image, out / "image.png")
write_labelmap_png(decoded, out / "corrupted_argmax.png")
print(f"wrote {out}/ground_truth.png, image.png, corrupted_argmax.png")
