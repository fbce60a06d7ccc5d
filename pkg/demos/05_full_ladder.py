"""The full vote -> crf -> morph ladder over a directory of scenes.

Builds a small dataset on disk, writes a pipeline config, runs the
pipeline API, and prints the stage report. The same run works from the
shell:

    segpost synth --out data --scenes 6 --members 3 --seed 12
    segpost pipeline --config config.toml
"""

import tempfile
from pathlib import Path

from segpost import (
    CrfParams,
    MemberSource,
    Palette,
    PipelineConfig,
    SceneSpec,
    corrupt_to_probs,
    generate_scene,
    render_report,
    run_pipeline,
    write_labelmap_png,
    write_palette_csv,
    write_probmap,
    write_rgb_png,
)
from segpost.pipeline import MorphParams

root = Path(tempfile.mkdtemp(prefix="segpost_demo_"))
for sub in ("images", "gt", "member_00", "member_01", "member_02"):
    (root / sub).mkdir()

for i in range(6):
    spec = SceneSpec(96, 96, 7, 14, 0.1, 0.9, 0.02, rng_seed=500 + i)
    gt, image = generate_scene(spec)
    stem = f"scene_{i:03d}"
    write_rgb_png(image, root / "images" / f"{stem}.png")
    write_labelmap_png(gt, root / "gt" / f"{stem}.png")
    for k in range(3):
        write_probmap(corrupt_to_probs(gt, spec, stream=k),
                      root / f"member_{k:02d}" / f"{stem}.spm1")

palette = Palette(tuple((i, (36 * i % 256, 90, 140), f"class_{i}") for i in range(7)))
write_palette_csv(palette, root / "palette.csv")

config = PipelineConfig(
    members=tuple(
        MemberSource(f"member_{k:02d}", probmap_dir=root / f"member_{k:02d}")
        for k in range(3)
    ),
    image_dir=root / "images",
    palette=root / "palette.csv",
    output_dir=root / "out",
    gt_dir=root / "gt",
    crf=CrfParams(3.0, 2.0, 13.0, 1.0, 1.0, iterations=5),
    morph=MorphParams(min_area=8),
)

result = run_pipeline(config)
print(render_report(result.reports, format="markdown"))
print(f"exit code {result.exit_code}; artifacts in {root / 'out'}")
