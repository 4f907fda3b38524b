import json
import shutil
from pathlib import Path

import pytest

from corpus_forge.cli import main as cli_main
from corpus_forge.config import ConfigError, PipelineConfig, STAGES
from corpus_forge.manifest import (
    ManifestRow,
    ProvenanceError,
    read_manifest,
    read_tsv,
    write_manifest,
)
from corpus_forge.pipeline import StageError, corpus_stats, run_pipeline
from corpus_forge.synth import SynthParams, synth_corpus
from corpus_forge.textnorm import default_orthography, normalize

from oracles import sum_hours

# big enough that dev/test (one speaker per gender each) leaves train and
# the post-decontamination LM corpus non-empty
SMALL = SynthParams(n_books=8, words_per_book=1600, speakers_per_gender=3)


def small_config(root, **overrides):
    kwargs = dict(
        input_dir=str(root / "input"),
        output_dir=str(root / "out"),
        seed=17,
        train_threshold_s=200.0,
        dev_test_cap_s=300.0,
    )
    kwargs.update(overrides)
    return PipelineConfig(**kwargs)


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    synth_corpus(root / "input", seed=17, params=SMALL)
    cfg = small_config(root)
    report = run_pipeline(cfg)
    return root, cfg, report


# -- config ---------------------------------------------------------------------


def test_config_file_and_env_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# toy config\n"
        "seed = 23\n"
        "wer_threshold = 0.3\n"
        'language = "en"\n'
        "lm_orders = 3,5\n",
        encoding="utf-8",
    )
    cfg = PipelineConfig.from_file(path, env={})
    assert cfg.seed == 23
    assert cfg.wer_threshold == 0.3
    assert cfg.lm_orders == (3, 5)
    cfg2 = PipelineConfig.from_file(path, env={"CORPUS_FORGE_SEED": "99"})
    assert cfg2.seed == 99


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("bogus_key = 1\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(path, env={})


def test_config_validation_ranges():
    with pytest.raises(ConfigError):
        PipelineConfig(min_segment_ms=20_000, max_segment_ms=10_000).validate()
    with pytest.raises(ConfigError):
        PipelineConfig(shard_stride=2000, shard_size=1250).validate()
    with pytest.raises(ConfigError):
        PipelineConfig(wer_threshold=1.5).validate()
    with pytest.raises(ConfigError):
        PipelineConfig(oov_context="maybe").validate()


def test_config_hash_ignores_locations_only():
    a = PipelineConfig(input_dir="x", output_dir="y")
    b = PipelineConfig(input_dir="p", output_dir="q")
    assert a.config_hash() == b.config_hash()
    c = PipelineConfig(seed=18)
    assert c.config_hash() != a.config_hash()


def test_stage_seeds_differ_per_stage():
    cfg = PipelineConfig(seed=17)
    seeds = {stage: cfg.stage_seed(stage) for stage in STAGES}
    assert len(set(seeds.values())) == len(STAGES)
    assert seeds == {stage: PipelineConfig(seed=17).stage_seed(stage) for stage in STAGES}


# -- manifest I/O -----------------------------------------------------------------


def make_row(i, partition="train"):
    return ManifestRow(
        segment_id=f"s{i:03d}",
        book_id="b0",
        chapter_id="c0",
        speaker_id="sp0",
        gender="M",
        start_ms=i * 1000,
        end_ms=i * 1000 + 500,
        transcript="one two three",
        wer=0.125,
        partition=partition,
    )


def test_manifest_round_trip(tmp_path):
    rows = [make_row(i) for i in range(5)]
    path = tmp_path / "m.tsv"
    write_manifest(path, rows, "deadbeef")
    back = read_manifest(path, expect_hash="deadbeef")
    assert back == rows


def test_manifest_hash_mismatch_refused(tmp_path):
    path = tmp_path / "m.tsv"
    write_manifest(path, [make_row(0)], "aaaa")
    with pytest.raises(ProvenanceError):
        read_manifest(path, expect_hash="bbbb")


def test_manifest_duplicate_ids_refused(tmp_path):
    with pytest.raises(ValueError):
        write_manifest(tmp_path / "m.tsv", [make_row(1), make_row(1)], "x")


def test_manifest_row_validation():
    with pytest.raises(ValueError):
        make_row(0, partition="bogus")
    with pytest.raises(ValueError):
        ManifestRow("s", "b", "c", "sp", "M", 100, 100, "t")
    assert make_row(0, partition="limited:10min-3").partition == "limited:10min-3"


# -- synth fixture ------------------------------------------------------------------


def test_synth_books_normalize_back_to_reading_words(tmp_path):
    summary = synth_corpus(tmp_path, seed=5, params=SMALL)
    orth = default_orthography("en")
    meta = json.loads((tmp_path / "books.json").read_text(encoding="utf-8"))
    by_id = {b["book_id"]: b for b in meta}
    for book_id in summary.book_ids:
        raw = (tmp_path / "books" / f"{book_id}.txt").read_text(encoding="utf-8")
        words = list(normalize(raw, orth).tokens)
        assert len(words) == SMALL.words_per_book
        # truth indices of every chapter point into exactly these words
        for ch in by_id[book_id]["chapters"]:
            truth = json.loads(
                (tmp_path / "truth" / f"{ch['chapter_id']}.json").read_text()
            )
            tokens = [
                json.loads(l)["w"]
                for l in (tmp_path / "tokens" / f"{ch['chapter_id']}.jsonl")
                .read_text()
                .splitlines()
                if l
            ]
            assert len(tokens) == len(truth["source_indices"])
            for tok, idx in zip(tokens, truth["source_indices"]):
                assert words[idx] == tok  # noise 0: spoken word == book word


def test_synth_is_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    synth_corpus(a, seed=9, params=SMALL)
    synth_corpus(b, seed=9, params=SMALL)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


# -- corpus stats --------------------------------------------------------------------


def test_stats_single_segment():
    row = ManifestRow("s0", "b", "c", "sp", "M", 0, 15_000, "x", 0.0, "train")
    stats = corpus_stats([row])
    assert stats["hours"]["train"] == pytest.approx(15 / 3600)
    assert stats["speaker_counts"]["train"] == {"M": 1}
    assert stats["_histogram_pairs"] == {("train", 15.0): 1}


def test_stats_match_summation_oracle(completed_run):
    root, cfg, _ = completed_run
    rows = []
    for part in ("train", "dev", "test"):
        rows.extend(read_manifest(Path(cfg.output_dir) / "manifests" / f"{part}.tsv"))
    stats = corpus_stats(rows)
    for part in ("train", "dev", "test"):
        expected = sum_hours(
            (r.start_ms, r.end_ms) for r in rows if r.partition == part
        )
        assert stats["hours"][part] == pytest.approx(expected, abs=1e-12)
    assert sum(stats["_histogram_pairs"].values()) == len(rows)


# -- pipeline ------------------------------------------------------------------------


def test_empty_input_fails_at_stage_one_naming_directory(tmp_path):
    cfg = small_config(tmp_path)
    with pytest.raises(StageError) as err:
        run_pipeline(cfg)
    assert err.value.stage == "normalize"
    assert str(tmp_path / "input" / "books") in str(err.value)


def test_completed_run_invariants(completed_run):
    root, cfg, report = completed_run
    out = Path(cfg.output_dir)
    assert report["config_hash"] == cfg.config_hash()
    assert set(report["stages"]) == set(STAGES)
    manifests = {
        part: read_manifest(out / "manifests" / f"{part}.tsv", cfg.config_hash())
        for part in ("train", "dev", "test")
    }
    # no speaker overlap across partitions
    speakers = {p: {r.speaker_id for r in rows} for p, rows in manifests.items()}
    assert not (speakers["train"] & speakers["dev"])
    assert not (speakers["train"] & speakers["test"])
    assert not (speakers["dev"] & speakers["test"])
    # per-gender dev/test speaker counts match
    for g in ("M", "F"):
        dev_g = {r.speaker_id for r in manifests["dev"] if r.gender == g}
        test_g = {r.speaker_id for r in manifests["test"] if r.gender == g}
        assert len(dev_g) == len(test_g) == 1
    # chapters are partition-exclusive
    chapter_part = {}
    for part, rows in manifests.items():
        for r in rows:
            assert chapter_part.setdefault(r.chapter_id, part) == part
    # limited supervision nesting
    ten_min = [
        {r.segment_id for r in read_manifest(out / "manifests" / f"limited_10min_{i}.tsv")}
        for i in range(1, 7)
    ]
    one_hour = {r.segment_id for r in read_manifest(out / "manifests" / "limited_1h.tsv")}
    ten_hour = {r.segment_id for r in read_manifest(out / "manifests" / "limited_10h.tsv")}
    assert set().union(*ten_min) == one_hour
    assert one_hour <= ten_hour
    train_ids = {r.segment_id for r in manifests["train"]}
    assert ten_hour <= train_ids
    # structured outputs carry the config hash
    stats = json.loads((out / "stats.json").read_text(encoding="utf-8"))
    assert stats["config_hash"] == cfg.config_hash()
    for report_path in (
        out / "work" / "split" / "split_report.json",
        out / "work" / "limited" / "limited_report.json",
    ):
        assert json.loads(report_path.read_text())["config_hash"] == cfg.config_hash()
    assert (out / "lm" / "corpus_books.txt").read_text().startswith(
        f"# config_hash={cfg.config_hash()}\n"
    )
    # language models exist alongside their ARPA exports and eval report
    for order in cfg.lm_orders:
        assert (out / "lm" / f"lm_{order}.cflm").exists()
        arpa_head = (out / "lm" / f"lm_{order}.arpa").read_text().splitlines()[0]
        assert f"config_hash={cfg.config_hash()}" in arpa_head
    lm_eval = json.loads((out / "lm" / "lm_eval.json").read_text(encoding="utf-8"))
    assert set(lm_eval["models"]) == {"3", "5"}


def test_rerun_single_stage_is_byte_identical(completed_run):
    root, cfg, _ = completed_run
    out = Path(cfg.output_dir)
    target = out / "manifests" / "train.tsv"
    before = target.read_bytes()
    run_pipeline(cfg, from_stage="split", until_stage="split")
    assert target.read_bytes() == before


def test_resume_refuses_mismatched_hash(completed_run, tmp_path):
    root, cfg, _ = completed_run
    tampered = small_config(root, seed=18)  # different semantics, same tree
    with pytest.raises((StageError, ProvenanceError)):
        run_pipeline(tampered, from_stage="retrieve", until_stage="retrieve")


def test_resume_requires_prerequisite_stage(tmp_path):
    synth_corpus(tmp_path / "input", seed=4, params=SMALL)
    cfg = small_config(tmp_path)
    with pytest.raises(StageError) as err:
        run_pipeline(cfg, from_stage="retrieve")
    assert "prerequisite" in str(err.value)


def test_unknown_stage_rejected(completed_run):
    _, cfg, _ = completed_run
    with pytest.raises(ValueError):
        run_pipeline(cfg, from_stage="nonsense")


# -- command line ----------------------------------------------------------------------


def test_cli_normalize_single_file(tmp_path):
    src = tmp_path / "page.txt"
    src.write_text("One two-\nthree; FOUR!\n", encoding="utf-8")
    assert cli_main(["normalize", "--in", str(src), "--out", str(tmp_path / "o.txt")]) == 0
    assert (tmp_path / "o.txt").read_text(encoding="utf-8") == "one twothree four\n"


def test_cli_normalize_segment_retrieve_round_trip(tmp_path, capsys):
    synth_corpus(tmp_path / "input", seed=6, params=SMALL)
    assert cli_main([
        "normalize",
        "--in", str(tmp_path / "input" / "books"),
        "--out", str(tmp_path / "norm"),
    ]) == 0
    assert cli_main([
        "segment",
        "--min-sec", "10", "--max-sec", "20",
        "--in", str(tmp_path / "input" / "tokens"),
        "--out", str(tmp_path / "segments.tsv"),
    ]) == 0
    rows = read_manifest(tmp_path / "segments.tsv")
    assert rows and all(10_000 <= r.duration_ms <= 20_000 for r in rows)
    # standalone manifest has no book ids; patch them in from chapter names
    patched = [
        ManifestRow(
            segment_id=r.segment_id,
            book_id=r.chapter_id.rsplit("_", 1)[0],
            chapter_id=r.chapter_id,
            speaker_id=r.speaker_id,
            gender=r.gender,
            start_ms=r.start_ms,
            end_ms=r.end_ms,
            transcript=r.transcript,
            wer=r.wer,
            partition=r.partition,
        )
        for r in rows
    ]
    write_manifest(tmp_path / "segments.tsv", patched, "adhoc")
    assert cli_main([
        "retrieve",
        "--books", str(tmp_path / "norm"),
        "--pseudo", str(tmp_path / "segments.tsv"),
        "--wer-threshold", "0.4",
        "--out", str(tmp_path / "candidates.tsv"),
    ]) == 0
    header, cands = read_tsv(tmp_path / "candidates.tsv")
    assert header == list(
        ("segment_id", "book_id", "offset_start", "offset_end", "wer", "accepted", "transcript")
    )
    assert len(cands) == len(rows)
    assert all(row[5] == "true" for row in cands)


def test_cli_lm_commands(tmp_path, completed_run, capsys):
    root, cfg, _ = completed_run
    out = Path(cfg.output_dir)
    model_path = tmp_path / "model.cflm"
    assert cli_main([
        "lm-train",
        "--order", "3",
        "--in", str(out / "work" / "normalize"),
        "--out", str(model_path),
        "--arpa", str(tmp_path / "model.arpa"),
    ]) == 0
    assert model_path.exists() and (tmp_path / "model.arpa").exists()
    assert cli_main([
        "lm-eval",
        "--model", str(model_path),
        "--dev", str(out / "manifests" / "dev.tsv"),
        "--report", str(tmp_path / "eval.json"),
    ]) == 0
    payload = json.loads((tmp_path / "eval.json").read_text(encoding="utf-8"))
    assert payload["order"] == 3
    assert payload["perplexity"] > 1.0


def test_cli_decontam(tmp_path, completed_run):
    root, cfg, _ = completed_run
    out = Path(cfg.output_dir)
    assert cli_main([
        "decontam",
        "--heldout", str(out / "manifests" / "dev.tsv"), str(out / "manifests" / "test.tsv"),
        "--books", str(out / "work" / "normalize"),
        "--threshold", "0.01",
        "--report", str(tmp_path / "report.tsv"),
    ]) == 0
    header, rows = read_tsv(tmp_path / "report.tsv")
    assert {r[1] for r in rows} == {"kept", "removed"}


def test_cli_run_and_exit_codes(tmp_path, capsys):
    synth_corpus(tmp_path / "input", seed=7, params=SMALL)
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(
        f"input_dir = {tmp_path / 'input'}\n"
        f"output_dir = {tmp_path / 'out'}\n"
        "seed = 17\n"
        "train_threshold_s = 200\n"
        "dev_test_cap_s = 300\n",
        encoding="utf-8",
    )
    assert cli_main(["run", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "out" / "report.json").exists()

    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("wer_threshold = 2.0\n", encoding="utf-8")
    assert cli_main(["run", "--config", str(bad_cfg)]) == 2

    empty_cfg = tmp_path / "empty.cfg"
    empty_cfg.write_text(
        f"input_dir = {tmp_path / 'missing'}\noutput_dir = {tmp_path / 'out2'}\n",
        encoding="utf-8",
    )
    assert cli_main(["run", "--config", str(empty_cfg)]) == 3


def test_cli_split_subcommand_overrides(tmp_path, capsys):
    synth_corpus(tmp_path / "input", seed=8, params=SMALL)
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(
        f"input_dir = {tmp_path / 'input'}\n"
        f"output_dir = {tmp_path / 'out'}\n"
        "train_threshold_s = 200\n"
        "dev_test_cap_s = 300\n",
        encoding="utf-8",
    )
    assert cli_main(["run", "--config", str(cfg_path), "--until-stage", "filter"]) == 0
    assert cli_main(["split", "--config", str(cfg_path), "--seed", "99"]) == 2  # hash mismatch
    assert cli_main(["split", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "out" / "manifests" / "dev.tsv").exists()
    assert cli_main(["limited", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "out" / "manifests" / "limited_10h.tsv").exists()


def test_cli_synth(tmp_path, capsys):
    assert cli_main([
        "synth", "--out", str(tmp_path / "x"), "--seed", "3",
        "--books", "2", "--words-per-book", "500",
        "--speakers-per-gender", "1", "--noise", "0.1",
    ]) == 0
    assert (tmp_path / "x" / "books.json").exists()
