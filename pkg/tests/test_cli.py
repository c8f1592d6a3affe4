"""
Tests for gaussproto.cli module.
"""

import tempfile
import shutil
from pathlib import Path

import pandas as pd
import pytest

from gaussproto.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main, parse_args
from gaussproto.exporters import SPLIT_FILES

SMALL_CONFIG = """\
num_scenes=8
labeled_fraction=0.5
num_classes=3
grid_size=4
feature_dim=3
hidden_dim=8
head_hidden=8
embed_dim=4
total_iters=4
eval_every=2
anchors_per_class=4
negatives_total=8
delta_s=0.0
delta_w=0.0
delta_u=0.0
metric_points=64
dump_points=16
"""


class TestParseArgs:
    """Tests for argument parsing."""

    def test_commands(self):
        """Test each subcommand is recognised."""
        for command in ("gen-data", "train", "eval", "ablate"):
            args = parse_args([command, "--out", "x"])
            assert args.command == command

    def test_unknown_command(self):
        """Test argparse exits on an unknown command."""
        with pytest.raises(SystemExit):
            parse_args(["fit"])


class TestCommands:
    """End-to-end tests of the command handlers."""

    def setup_method(self):
        """Set up test fixtures."""
        self.temp_dir = Path(tempfile.mkdtemp())
        self.config = self.temp_dir / "small.cfg"
        self.config.write_text(SMALL_CONFIG)
        self.data = self.temp_dir / "data"
        self.out = self.temp_dir / "run"

    def teardown_method(self):
        """Clean up test fixtures."""
        if self.temp_dir.exists():
            shutil.rmtree(self.temp_dir)

    def _run(self, command, *extra):
        return main([command, "--config", str(self.config), *extra])

    def _gen_data(self, out=None):
        return self._run("gen-data", "--out", str(out or self.data), "--seed", "5")

    def test_gen_data_reproducible(self):
        """Test the same seed writes byte-identical dataset files."""
        assert self._gen_data() == EXIT_OK
        again = self.temp_dir / "again"
        assert self._gen_data(again) == EXIT_OK
        for name in SPLIT_FILES.values():
            assert (self.data / name).read_bytes() == (again / name).read_bytes()

    def test_unknown_config_key(self):
        """Test an unknown key exits with the configuration code."""
        self.config.write_text(SMALL_CONFIG + "tua=0.2\n")
        assert self._gen_data() == EXIT_CONFIG

    def test_invalid_strategy(self):
        """Test virtual negatives without GDP exit with the configuration code."""
        self.config.write_text(SMALL_CONFIG + "prototype=ema\nnegatives=vn\n")
        assert self._gen_data() == EXIT_CONFIG

    def test_missing_config_file(self):
        """Test a missing config file exits with the I/O code."""
        self.config = self.temp_dir / "absent.cfg"
        assert self._gen_data() == EXIT_IO

    def test_train_without_data(self):
        """Test training on a missing dataset exits with the I/O code."""
        code = self._run("train", "--data", str(self.data), "--out", str(self.out))
        assert code == EXIT_IO

    def test_corrupt_data(self):
        """Test a truncated dataset exits with the I/O code."""
        self._gen_data()
        path = self.data / SPLIT_FILES["labeled"]
        path.write_bytes(path.read_bytes()[:30])
        code = self._run("train", "--data", str(self.data), "--out", str(self.out))
        assert code == EXIT_IO

    def test_train_then_eval(self):
        """Test eval on the trained checkpoint reproduces the final mIoU."""
        assert self._gen_data() == EXIT_OK
        args = ("--data", str(self.data), "--out", str(self.out))
        assert self._run("train", *args) == EXIT_OK

        for name in (
            "metrics.csv",
            "timing.csv",
            "checkpoint.gpck",
            "embeddings.jsonl",
            "config.json",
        ):
            assert (self.out / name).exists()
        metrics = pd.read_csv(self.out / "metrics.csv")
        assert metrics["iteration"].tolist() == [2, 4]

        assert self._run("eval", *args) == EXIT_OK
        evaluation = pd.read_csv(self.out / "eval.csv")
        assert evaluation["iteration"][0] == 4
        assert evaluation["miou"][0] == pytest.approx(metrics["miou"].iloc[-1])

    def test_eval_wrong_dataset(self):
        """Test a checkpoint is refused on data with another class count."""
        self._gen_data()
        args = ("--data", str(self.data), "--out", str(self.out))
        assert self._run("train", *args) == EXIT_OK

        self.config.write_text(SMALL_CONFIG.replace("num_classes=3", "num_classes=4"))
        other = self.temp_dir / "other"
        assert self._gen_data(other) == EXIT_OK
        code = self._run(
            "eval",
            "--data",
            str(other),
            "--out",
            str(self.out),
            "--checkpoint",
            str(self.out / "checkpoint.gpck"),
        )
        assert code == EXIT_CONFIG

    def test_ablate(self):
        """Test one row and one seed give one run line and one summary line."""
        self.config.write_text(
            SMALL_CONFIG + "ablate_rows=pr_gdp_vn\nablate_seeds=1\nuse_cache=false\n"
        )
        code = self._run("ablate", "--data", str(self.data), "--out", str(self.out))
        assert code == EXIT_OK

        runs = pd.read_csv(self.out / "ablation_runs.csv")
        summary = pd.read_csv(self.out / "ablation_summary.csv")
        assert len(runs) == 1
        assert runs["status"][0] == "ok"
        assert len(summary) == 1
        assert runs["prototype_shift"][0] >= 0.0
        shift = runs["prototype_shift"][0]
        assert summary["prototype_shift_mean"][0] == pytest.approx(shift)
        assert (self.out / "ablation" / "pr_gdp_vn" / "seed0" / "metrics.csv").exists()

    def test_metrics_byte_identical(self):
        """Test rerunning the same config and seed writes identical metrics."""
        self._gen_data()
        outputs = [self.temp_dir / "a", self.temp_dir / "b"]
        for out in outputs:
            code = self._run("train", "--data", str(self.data), "--out", str(out))
            assert code == EXIT_OK
        first, second = (out / "metrics.csv" for out in outputs)
        assert first.read_bytes() == second.read_bytes()


class TestDefaultAblation:
    """Directional checks of the full ablation on the default benchmark."""

    def setup_method(self):
        """Set up test fixtures."""
        self.temp_dir = Path(tempfile.mkdtemp())
        self.config = Path(__file__).resolve().parents[1] / "configs" / "default.cfg"

    def teardown_method(self):
        """Clean up test fixtures."""
        if self.temp_dir.exists():
            shutil.rmtree(self.temp_dir)

    @pytest.mark.slow
    def test_components_improve_in_order(self):
        """Test each added component raises the seed-averaged mIoU."""
        code = main(
            [
                "ablate",
                "--config",
                str(self.config),
                "--data",
                str(self.temp_dir / "data"),
                "--out",
                str(self.temp_dir / "ablation"),
            ]
        )
        assert code == EXIT_OK
        runs = pd.read_csv(self.temp_dir / "ablation" / "ablation_runs.csv")
        assert (runs["status"] == "ok").all()
        assert runs.groupby("row").size().tolist() == [5, 5, 5, 5]

        by_seed = runs.pivot(index="seed", columns="row")
        miou = by_seed["miou"]
        for lower, upper in (
            ("baseline", "pr"),
            ("pr", "pr_gdp"),
            ("pr_gdp", "pr_gdp_vn"),
        ):
            assert (miou[upper] - miou[lower]).mean() > 0.0, (lower, upper)

        full, baseline = "pr_gdp_vn", "baseline"
        silhouette = by_seed["silhouette"]
        davies_bouldin = by_seed["davies_bouldin"]
        assert silhouette[full].mean() >= silhouette[baseline].mean()
        assert davies_bouldin[full].mean() <= davies_bouldin[baseline].mean()
