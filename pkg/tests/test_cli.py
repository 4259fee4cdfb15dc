from __future__ import annotations

import json

import numpy as np
import pytest

from tagfuse.cli import main
from tagfuse.embeddings import write_embeddings
from tagfuse.imputation import read_outcomes_jsonl
from tagfuse.metadata import write_captions_jsonl, write_metadata_jsonl

from .conftest import build_corpus


@pytest.fixture(scope="module")
def pipeline_files(tmp_path_factory):
    """Metadata, captions, and embedding files for a small corpus."""
    root = tmp_path_factory.mktemp("pipeline")
    corpus = build_corpus(n=40, seed=21)
    write_metadata_jsonl(corpus.metadata.values(), root / "metadata.jsonl")
    write_captions_jsonl(corpus.captions.values(), root / "captions.jsonl")
    write_embeddings(corpus.audio, root / "audio.jmxe")
    write_embeddings(corpus.meta_emb, root / "meta.jmxe")
    return root, corpus


def _run(*argv) -> int:
    return main([str(a) for a in argv])


class TestBuildIndexAndRetrieve:
    def test_build_index_with_best_lambdas(self, pipeline_files):
        root, _ = pipeline_files
        code = _run(
            "build-index",
            "--audio-embeddings", root / "audio.jmxe",
            "--metadata-embeddings", root / "meta.jmxe",
            "--out", root / "index.jmxi",
            "--lambda-audio", "0.6", "--lambda-meta", "0.4",
            "--seed", "3",
        )
        assert code == 0
        assert (root / "index.jmxi").exists()

    def test_lambda_sum_violation_exits_1(self, pipeline_files, capsys):
        root, _ = pipeline_files
        code = _run(
            "build-index",
            "--audio-embeddings", root / "audio.jmxe",
            "--metadata-embeddings", root / "meta.jmxe",
            "--out", root / "bad.jmxi",
            "--lambda-audio", "0.7", "--lambda-meta", "0.4",
        )
        assert code == 1
        assert not (root / "bad.jmxi").exists()

    def test_retrieve_prints_json(self, pipeline_files, capsys):
        root, _ = pipeline_files
        code = _run("retrieve", "--index", root / "index.jmxi",
                    "--query-id", "1", "--k", "10", "--json")
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["query_id"] == 1
        assert len(payload["neighbors"]) == 10
        sims = [n["similarity"] for n in payload["neighbors"]]
        assert sims == sorted(sims, reverse=True)

    def test_retrieve_unknown_id_exits_1(self, pipeline_files):
        root, _ = pipeline_files
        assert _run("retrieve", "--index", root / "index.jmxi", "--query-id", "9999") == 1

    def test_rerun_is_byte_identical(self, pipeline_files):
        root, _ = pipeline_files
        for name in ("r1.jmxi", "r2.jmxi"):
            assert _run(
                "build-index",
                "--audio-embeddings", root / "audio.jmxe",
                "--metadata-embeddings", root / "meta.jmxe",
                "--out", root / name,
                "--lambda-audio", "0.6", "--lambda-meta", "0.4", "--seed", "3",
            ) == 0
        assert (root / "r1.jmxi").read_bytes() == (root / "r2.jmxi").read_bytes()


class TestIngestAndCheck:
    def test_ingest_reemits_canonical_embeddings(self, pipeline_files):
        root, _ = pipeline_files
        out = root / "audio_canonical.jmxe"
        assert _run("ingest", "--embeddings", root / "audio.jmxe", "--out", out) == 0
        assert out.read_bytes() == (root / "audio.jmxe").read_bytes()

    def test_ingest_validates_metadata(self, pipeline_files):
        root, _ = pipeline_files
        out = root / "meta_canonical.jsonl"
        assert _run("ingest", "--metadata", root / "metadata.jsonl",
                    "--metadata-out", out) == 0
        assert out.exists()

    def test_ingest_requires_some_input(self):
        assert _run("ingest") == 1

    def test_embed_check_reports(self, pipeline_files, capsys):
        root, _ = pipeline_files
        assert _run("embed-check", root / "audio.jmxe", root / "meta.jmxe") == 0
        out = capsys.readouterr().out
        assert "count=40" in out

    def test_embed_check_corrupt_file_exits_1(self, pipeline_files, tmp_path):
        bad = tmp_path / "bad.jmxe"
        bad.write_bytes(b"JUNKJUNKJUNK")
        assert _run("embed-check", bad) == 1


class TestImputeEvaluateReport:
    def test_impute_pipeline(self, pipeline_files, mock_llm, monkeypatch):
        root, _ = pipeline_files
        monkeypatch.setenv("TAGFUSE_ENDPOINT", mock_llm.base_url)
        code = _run(
            "impute",
            "--metadata", root / "metadata.jsonl",
            "--captions", root / "captions.jsonl",
            "--index", root / "index.jmxi",
            "--out", root / "outcomes.jsonl",
            "--mode", "retrieval", "--max-in-flight", "4",
        )
        assert code == 0
        outcomes = read_outcomes_jsonl(root / "outcomes.jsonl")
        assert len(outcomes) == 40
        assert any(o.skipped for o in outcomes)
        assert any(o.parse_failed for o in outcomes)

    def test_impute_without_endpoint_exits_1(self, pipeline_files, monkeypatch):
        root, _ = pipeline_files
        monkeypatch.delenv("TAGFUSE_ENDPOINT", raising=False)
        assert _run(
            "impute",
            "--metadata", root / "metadata.jsonl",
            "--captions", root / "captions.jsonl",
            "--index", root / "index.jmxi",
            "--out", root / "x.jsonl",
        ) == 1

    def test_evaluate_table(self, pipeline_files, capsys):
        root, corpus = pipeline_files
        vocab = sorted({t for m in corpus.metadata.values()
                        for field in ("genres", "instruments", "vartags")
                        for v in getattr(m, field)
                        for t in v.lower().split()}
                       | {"slow", "medium", "fast", "very"})
        rng = np.random.default_rng(2)
        lines = [f"{len(vocab)} 4"]
        for token in vocab:
            lines.append(token + " " + " ".join(f"{x:.5f}" for x in rng.normal(size=4)))
        (root / "tokens.vec").write_text("\n".join(lines) + "\n")

        code = _run(
            "evaluate",
            "--imputations", root / "outcomes.jsonl",
            "--vectors", root / "tokens.vec",
            "--fields", "genres,speed,vartags",
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "BERT-Score" in out and "BLEU-4" in out
        assert "Genres" in out and "Speed" in out and "Vartags" in out

    def test_evaluate_json_mode(self, pipeline_files, capsys):
        root, _ = pipeline_files
        code = _run(
            "evaluate",
            "--imputations", root / "outcomes.jsonl",
            "--vectors", root / "tokens.vec",
            "--fields", "speed", "--json",
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert "retrieval" in payload
        assert 0.0 <= payload["retrieval"]["speed"]["bleu_1"] <= 1.0

    def test_report_distributions(self, pipeline_files):
        root, _ = pipeline_files
        code = _run(
            "report",
            "--original", root / "metadata.jsonl",
            "--imputations", root / "outcomes.jsonl",
            "--out-dir", root / "dist",
        )
        assert code == 0
        for field in ("genres", "speed", "vartags"):
            csv_path = root / "dist" / f"{field}_distribution.csv"
            assert csv_path.read_text().startswith("value,count_original,count_imputed")


class TestStats:
    def test_stats_over_wavs(self, tmp_path, capsys):
        from .test_audiostats import _write_wav

        rng = np.random.default_rng(3)
        for tid in (1, 2):
            _write_wav(tmp_path / f"{tid}.wav", rng.uniform(-0.8, 0.8, 4000), 8000, "i16")
        code = _run("stats", "--audio-dir", tmp_path, "--csv-out", tmp_path / "stats.csv")
        assert code == 0
        assert "Zero Crossing Rate" in capsys.readouterr().out
        assert (tmp_path / "stats.csv").read_text().startswith("measure,")

    def test_stats_without_inputs_exits_1(self):
        assert _run("stats") == 1


class TestConfigAndErrors:
    def test_unknown_subcommand(self, capsys):
        assert _run("frobnicate") == 1

    def test_missing_input_path(self, tmp_path):
        assert _run("retrieve", "--index", tmp_path / "absent.jmxi", "--query-id", "1") == 1

    def test_config_file_defaults_with_flag_override(self, pipeline_files, tmp_path, capsys):
        root, _ = pipeline_files
        config = tmp_path / "run.json"
        config.write_text(json.dumps({
            "paths": {"index": str(root / "index.jmxi")},
            "k": 3,
        }))
        assert _run("--config", config, "retrieve", "--query-id", "2", "--json") == 0
        assert len(json.loads(capsys.readouterr().out)["neighbors"]) == 3
        assert _run("--config", config, "retrieve", "--query-id", "2",
                    "--k", "5", "--json") == 0
        assert len(json.loads(capsys.readouterr().out)["neighbors"]) == 5

    def test_config_lambda_validation(self, tmp_path):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"fusion": {"lambda_audio": 0.9, "lambda_meta": 0.4}}))
        assert _run("--config", config, "embed-check", "whatever") == 1
