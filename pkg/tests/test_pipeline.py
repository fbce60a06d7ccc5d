"""Pipeline config parsing, stage wiring, and end-to-end ladder direction."""

import numpy as np
import pytest

from segpost import (
    CrfParams,
    EnsembleConfig,
    LabelMap,
    MemberSource,
    Palette,
    PipelineConfig,
    SceneSpec,
    argmax_labels,
    corrupt_to_probs,
    generate_scene,
    read_labelmap_png,
    run_pipeline,
    vote,
    write_labelmap_png,
    write_palette_csv,
    write_probmap,
    write_rgb_png,
)
from segpost.errors import ConfigError
from segpost.metrics import parse_report_csv
from segpost.pipeline import (
    MorphParams,
    config_from_mapping,
    labels_to_soft_probs,
    load_config,
    render_config_toml,
)


def make_palette(c):
    return Palette(tuple((i, (20 * i % 256, 60, 90), f"class_{i}") for i in range(c)))


def write_bundle_dirs(root, n_scenes=3, spec_kwargs=None, members=2):
    """Scene directories in the pipeline's expected layout."""
    kwargs = dict(
        height=24, width=24, num_classes=4, num_seeds=5,
        noise_flip_rate=0.1, flip_confidence=0.9, speckle_rate=0.02,
    )
    kwargs.update(spec_kwargs or {})
    (root / "images").mkdir(parents=True)
    (root / "gt").mkdir()
    for k in range(members):
        (root / f"member_{k:02d}").mkdir()
    for i in range(n_scenes):
        spec = SceneSpec(rng_seed=400 + i, **kwargs)
        gt, image = generate_scene(spec)
        stem = f"scene_{i:03d}"
        write_rgb_png(image, root / "images" / f"{stem}.png")
        write_labelmap_png(gt, root / "gt" / f"{stem}.png")
        for k in range(members):
            pm = corrupt_to_probs(gt, spec, stream=k)
            write_probmap(pm, root / f"member_{k:02d}" / f"{stem}.spm1")
    pal = make_palette(kwargs["num_classes"])
    write_palette_csv(pal, root / "palette.csv")
    return kwargs["num_classes"]


def base_config(root, stages=("vote", "crf", "morph"), members=2, **overrides):
    member_rows = tuple(
        MemberSource(f"member_{k:02d}", probmap_dir=root / f"member_{k:02d}")
        for k in range(members)
    )
    defaults = dict(
        members=member_rows,
        image_dir=root / "images",
        palette=root / "palette.csv",
        output_dir=root / "out",
        stages=tuple(stages),
        gt_dir=root / "gt",
        crf=CrfParams(3.0, 2.0, 13.0, 1.0, 1.0, iterations=3),
        morph=MorphParams(min_area=4),
    )
    defaults.update(overrides)
    return PipelineConfig(**defaults)


class TestConfigValidation:
    def test_stage_order_violation(self, tmp_path):
        num = write_bundle_dirs(tmp_path)
        with pytest.raises(ConfigError, match="order"):
            base_config(tmp_path, stages=("morph", "vote"))

    def test_empty_stages_rejected(self, tmp_path):
        write_bundle_dirs(tmp_path)
        with pytest.raises(ConfigError):
            base_config(tmp_path, stages=())

    def test_unknown_stage_rejected(self, tmp_path):
        write_bundle_dirs(tmp_path)
        with pytest.raises(ConfigError):
            base_config(tmp_path, stages=("vote", "blur"))

    def test_multi_member_needs_vote(self, tmp_path):
        write_bundle_dirs(tmp_path)
        with pytest.raises(ConfigError, match="vote"):
            base_config(tmp_path, stages=("crf",))

    def test_member_needs_exactly_one_source(self, tmp_path):
        with pytest.raises(ConfigError):
            MemberSource("m", probmap_dir=tmp_path, labelmap_dir=tmp_path)
        with pytest.raises(ConfigError):
            MemberSource("m")

    def test_unknown_mapping_key_rejected(self, tmp_path):
        write_bundle_dirs(tmp_path)
        data = {
            "members": [{"name": "a", "probmap_dir": "member_00"}],
            "image_dir": "images",
            "palette": "palette.csv",
            "output_dir": "out",
            "sharpen": True,
        }
        with pytest.raises(ConfigError, match="sharpen"):
            config_from_mapping(data, tmp_path)

    def test_toml_round_trip(self, tmp_path):
        write_bundle_dirs(tmp_path)
        config = base_config(tmp_path)
        text = render_config_toml(config)
        path = tmp_path / "config.toml"
        path.write_text(text)
        back = load_config(path)
        assert back == config


class TestLabelsToSoftProbs:
    def test_epsilon_spread(self):
        lm = LabelMap(np.array([[1]], dtype=np.uint8), 3)
        pm = labels_to_soft_probs(lm, epsilon=0.05)
        assert pm.data[0, 0] == pytest.approx([0.025, 0.95, 0.025], abs=1e-7)

    def test_ignore_becomes_uniform(self):
        lm = LabelMap(np.array([[255]], dtype=np.uint8), 4)
        pm = labels_to_soft_probs(lm)
        assert pm.data[0, 0] == pytest.approx([0.25] * 4, abs=1e-7)


class TestRunPipeline:
    def test_single_member_vote_is_identity(self, tmp_path):
        write_bundle_dirs(tmp_path, members=1)
        config = base_config(tmp_path, stages=("vote",), members=1)
        result = run_pipeline(config)
        assert result.exit_code == 0
        for i in range(3):
            stem = f"scene_{i:03d}"
            out = read_labelmap_png(tmp_path / "out" / "labels" / f"{stem}.png", 4)
            member = argmax_labels(
                __import__("segpost").read_probmap(
                    tmp_path / "member_00" / f"{stem}.spm1"
                )
            )
            assert np.array_equal(out.data, member.data)

    def test_artifacts_written(self, tmp_path):
        write_bundle_dirs(tmp_path)
        config = base_config(tmp_path)
        result = run_pipeline(config)
        assert result.exit_code == 0
        out = tmp_path / "out"
        assert (out / "report.md").exists()
        assert (out / "report.csv").exists()
        assert (out / "config_echo.toml").exists()
        assert (out / "color" / "scene_000.png").exists()

    def test_report_rows_members_then_stages(self, tmp_path):
        write_bundle_dirs(tmp_path)
        result = run_pipeline(base_config(tmp_path))
        tags = [r.stage_tag for r in result.reports]
        assert tags == ["member_00", "member_01", "+E", "+E+D", "+E+D+M"]

    def test_report_params_echoed(self, tmp_path):
        write_bundle_dirs(tmp_path)
        result = run_pipeline(base_config(tmp_path))
        echo = result.reports[-1].params_echo
        assert echo["iterations"] == 3
        assert echo["min_area"] == 4
        assert echo["tie_break"] == "priority"

    def test_csv_report_parses_back(self, tmp_path):
        write_bundle_dirs(tmp_path)
        result = run_pipeline(base_config(tmp_path))
        text = (tmp_path / "out" / "report.csv").read_text()
        rows = parse_report_csv(text)
        assert [r.stage_tag for r in rows] == [r.stage_tag for r in result.reports]
        for got, want in zip(rows, result.reports):
            assert got.miou == pytest.approx(want.miou, abs=0.005)

    def test_thread_count_does_not_change_output(self, tmp_path):
        write_bundle_dirs(tmp_path)
        cfg1 = base_config(tmp_path, output_dir=tmp_path / "out1", threads=1)
        cfg4 = base_config(tmp_path, output_dir=tmp_path / "out4", threads=4)
        r1, r4 = run_pipeline(cfg1), run_pipeline(cfg4)
        assert r1.exit_code == r4.exit_code == 0
        for i in range(3):
            stem = f"scene_{i:03d}"
            a = (tmp_path / "out1" / "labels" / f"{stem}.png").read_bytes()
            b = (tmp_path / "out4" / "labels" / f"{stem}.png").read_bytes()
            assert a == b
        assert [r.miou for r in r1.reports] == [r.miou for r in r4.reports]

    def test_missing_stem_reported(self, tmp_path):
        write_bundle_dirs(tmp_path)
        (tmp_path / "member_01" / "scene_001.spm1").unlink()
        result = run_pipeline(base_config(tmp_path))
        assert result.exit_code != 0
        assert any(stem == "scene_001" for stem, _ in result.errors)

    def test_ladder_direction_end_to_end(self, tmp_path):
        write_bundle_dirs(
            tmp_path, n_scenes=4, members=3,
            spec_kwargs=dict(height=48, width=48, num_classes=5, num_seeds=8),
        )
        config = base_config(
            tmp_path, members=3,
            crf=CrfParams(3.0, 2.0, 13.0, 1.0, 1.0, iterations=5),
            morph=MorphParams(min_area=8),
        )
        result = run_pipeline(config)
        assert result.exit_code == 0
        by_tag = {r.stage_tag: r.miou for r in result.reports}
        best_member = max(v for k, v in by_tag.items() if k.startswith("member"))
        assert by_tag["+E"] >= best_member
        assert by_tag["+E+D+M"] > by_tag["+E"]

    def test_matches_manual_stage_sequence(self, tmp_path):
        import segpost
        from segpost import crf_refine, remove_small_components

        write_bundle_dirs(tmp_path)
        config = base_config(tmp_path)
        run_pipeline(config)
        ens = EnsembleConfig(("member_00", "member_01"))
        for i in range(3):
            stem = f"scene_{i:03d}"
            members = [
                argmax_labels(segpost.read_probmap(tmp_path / f"member_{k:02d}" / f"{stem}.spm1"))
                for k in range(2)
            ]
            image = segpost.read_rgb_png(tmp_path / "images" / f"{stem}.png")
            voted = vote(members, ens)
            refined = argmax_labels(
                crf_refine(labels_to_soft_probs(voted), image, config.crf)
            )
            cleaned = remove_small_components(refined, 4).labels
            got = read_labelmap_png(tmp_path / "out" / "labels" / f"{stem}.png", 4)
            assert np.array_equal(got.data, cleaned.data)
