import json
from pathlib import Path

import jsonschema

from ccrk.cli import main

DOCS = Path(__file__).resolve().parent.parent / "docs"


def write_config(tmp_path, **kw):
    cfg = dict(n_instances=24, n_languages=2, dim=16, latent_dim=6,
               noise_sigma=0.1, tokens_per_text=8, seed=3)
    cfg.update(kw)
    path = tmp_path / "gen.json"
    path.write_text(json.dumps(cfg))
    return path


def schema():
    with open(DOCS / "metrics.schema.json") as fh:
        return json.load(fh)


class TestGen:
    def test_writes_corpus_and_tokens(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "c.ccrk"
        toks = tmp_path / "t.json"
        assert main(["gen", "--config", str(cfg), "--out", str(out),
                     "--tokens-out", str(toks)]) == 0
        assert out.exists() and toks.exists()
        first_line = capsys.readouterr().out.splitlines()[0]
        resolved = json.loads(first_line)
        assert resolved["subcommand"] == "gen"
        assert resolved["config"]["seed"] == 3

    def test_bit_reproducible(self, tmp_path):
        cfg = write_config(tmp_path)
        a, b = tmp_path / "a.ccrk", tmp_path / "b.ccrk"
        assert main(["gen", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["gen", "--config", str(cfg), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seed_override(self, tmp_path):
        cfg = write_config(tmp_path)
        a, b = tmp_path / "a.ccrk", tmp_path / "b.ccrk"
        main(["gen", "--config", str(cfg), "--out", str(a), "--seed", "9"])
        main(["gen", "--config", str(cfg), "--out", str(b)])
        assert a.read_bytes() != b.read_bytes()

    def test_unknown_config_field(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"bogus": 1}))
        assert main(["gen", "--config", str(path), "--out", str(tmp_path / "x")]) == 2

    def test_csv_format(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "c.csv"
        assert main(["gen", "--config", str(cfg), "--out", str(out),
                     "--format", "csv"]) == 0
        assert out.read_text().startswith("instance_id,language,")


class TestEval:
    def test_perfect_corpus_metrics(self, tmp_path):
        cfg = write_config(tmp_path, noise_sigma=0.0, lift_spread=0.0)
        corpus = tmp_path / "c.ccrk"
        out = tmp_path / "metrics.json"
        main(["gen", "--config", str(cfg), "--out", str(corpus)])
        assert main(["eval", "--corpus", str(corpus), "--direction", "both",
                     "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        jsonschema.validate(payload, schema())
        assert payload["tr"]["mean_recall"]["r1"] == 1.0
        assert payload["tr"]["mrv"] == 0.0
        assert payload["ir"]["mrv"] == 0.0

    def test_single_direction_schema(self, tmp_path):
        cfg = write_config(tmp_path)
        corpus = tmp_path / "c.ccrk"
        out = tmp_path / "m.json"
        main(["gen", "--config", str(cfg), "--out", str(corpus)])
        assert main(["eval", "--corpus", str(corpus), "--direction", "tr",
                     "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        jsonschema.validate(payload, schema())
        assert payload["direction"] == "TR"

    def test_missing_corpus_is_data_error(self, tmp_path):
        assert main(["eval", "--corpus", str(tmp_path / "nope.ccrk"),
                     "--out", str(tmp_path / "m.json")]) == 2


class TestTrain:
    def test_artifacts(self, tmp_path):
        cfg = write_config(tmp_path)
        corpus = tmp_path / "c.ccrk"
        main(["gen", "--config", str(cfg), "--out", str(corpus)])
        out_dir = tmp_path / "run"
        assert main(["train", "--corpus", str(corpus), "--mode", "1tok",
                     "--epochs", "2", "--batch-size", "8", "--seed", "1",
                     "--eval-every", "1", "--out-dir", str(out_dir)]) == 0
        for name in ("trace.csv", "checkpoints.csv", "metrics.json",
                     "embeddings.ccrk", "trace.png", "checkpoints.png"):
            assert (out_dir / name).exists(), name
        header = (out_dir / "trace.csv").read_text().splitlines()[0]
        assert header == "step,total_loss,kcl_i2t,kcl_t2i,mitm,cmlm"
        header = (out_dir / "checkpoints.csv").read_text().splitlines()[0]
        assert header == "epoch,direction,mean_r1,mrv,recall_gap"
        jsonschema.validate(json.loads((out_dir / "metrics.json").read_text()),
                            schema())

    def test_no_plot(self, tmp_path):
        cfg = write_config(tmp_path)
        corpus = tmp_path / "c.ccrk"
        main(["gen", "--config", str(cfg), "--out", str(corpus)])
        out_dir = tmp_path / "run2"
        assert main(["train", "--corpus", str(corpus), "--epochs", "1",
                     "--batch-size", "8", "--out-dir", str(out_dir), "--no-plot"]) == 0
        assert not (out_dir / "trace.png").exists()
        assert (out_dir / "trace.csv").exists()

    def test_full_mode_needs_tokens(self, tmp_path):
        cfg = write_config(tmp_path)
        corpus = tmp_path / "c.ccrk"
        toks = tmp_path / "t.json"
        main(["gen", "--config", str(cfg), "--out", str(corpus),
              "--tokens-out", str(toks)])
        assert main(["train", "--corpus", str(corpus), "--mode", "full",
                     "--epochs", "1", "--out-dir", str(tmp_path / "x")]) == 2
        assert main(["train", "--corpus", str(corpus), "--mode", "full",
                     "--tokens", str(toks), "--epochs", "1", "--batch-size", "8",
                     "--out-dir", str(tmp_path / "y"), "--no-plot"]) == 0


class TestCompare:
    def test_artifacts(self, tmp_path):
        cfg = write_config(tmp_path, n_instances=16)
        out_dir = tmp_path / "cmp"
        assert main(["compare", "--config", str(cfg), "--seeds", "1",
                     "--epochs", "2", "--batch-size", "8", "--eval-every", "1",
                     "--out-dir", str(out_dir)]) == 0
        assert (out_dir / "comparison.csv").exists()
        assert (out_dir / "comparison.png").exists()
        summary = json.loads((out_dir / "summary.json").read_text())
        assert set(summary) == {"one_to_one", "one_to_k"}
        assert "mean_final_mrv" in summary["one_to_k"]


class TestGeometry:
    def test_csv_and_figure(self, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(["geometry", "--lemma", "1", "--dim", "8", "--samples", "50",
                     "--seed", "2", "--out", str(out)]) == 0
        assert out.exists() and (tmp_path / "sweep.png").exists()
        header = out.read_text().splitlines()[0]
        assert header == "controlled_angle_rad,mean_rad,p5_rad,p95_rad,n_samples,seed"

    def test_bit_reproducible(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["geometry", "--lemma", "2", "--dim", "8", "--samples", "40",
              "--seed", "5", "--out", str(a), "--no-plot"])
        main(["geometry", "--lemma", "2", "--dim", "8", "--samples", "40",
              "--seed", "5", "--out", str(b), "--no-plot"])
        assert a.read_bytes() == b.read_bytes()


class TestGradcheck:
    def test_all_losses_pass(self, capsys):
        assert main(["gradcheck", "--loss", "all", "--trials", "3", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "max relative error" in out


class TestRank:
    def test_query_output(self, tmp_path, capsys):
        cfg = write_config(tmp_path, noise_sigma=0.0, lift_spread=0.0)
        corpus = tmp_path / "c.ccrk"
        main(["gen", "--config", str(cfg), "--out", str(corpus)])
        capsys.readouterr()
        assert main(["rank", "--corpus", str(corpus), "--query-id", "i000003",
                     "--top", "5"]) == 0
        lines = capsys.readouterr().out.splitlines()
        result = json.loads("\n".join(lines[1:]))
        assert result["query_id"] == "i000003"
        for lang_block in result["per_language"].values():
            assert lang_block["true_rank"] == 1
            assert lang_block["top"][0]["is_match"]

    def test_rerank_promotes_truth(self, tmp_path, capsys):
        cfg = write_config(tmp_path, n_instances=40, noise_sigma=0.6)
        corpus = tmp_path / "c.ccrk"
        main(["gen", "--config", str(cfg), "--out", str(corpus)])
        capsys.readouterr()
        assert main(["rank", "--corpus", str(corpus), "--query-id", "i000001",
                     "--top", "3", "--rerank-top-n", "128"]) == 0
        lines = capsys.readouterr().out.splitlines()
        result = json.loads("\n".join(lines[1:]))
        for lang_block in result["per_language"].values():
            assert lang_block["true_rank"] == 1  # oracle + truth within top 128

    def test_unknown_id_is_data_error(self, tmp_path):
        cfg = write_config(tmp_path)
        corpus = tmp_path / "c.ccrk"
        main(["gen", "--config", str(cfg), "--out", str(corpus)])
        assert main(["rank", "--corpus", str(corpus), "--query-id", "missing"]) == 2


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, tmp_path):
        assert main(["geometry", "--lemma", "1", "--out", str(tmp_path / "s.csv"),
                     "--bogus"]) == 1

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 1

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0
