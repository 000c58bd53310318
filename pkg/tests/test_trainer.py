"""Integration tests for the training loop, evaluation, and the CLI."""

import numpy as np
import pytest

from frameweave.cli import main as cli_main
from frameweave.errors import ParameterError, ShapeError
from frameweave.frames import Dataset, synth_motion_dataset, read_frame
from frameweave.losses import mse_pixel
from frameweave.tensor import Rng, Tensor
from frameweave.train import (
    CURVE_HEADER,
    TrainConfig,
    evaluate,
    interpolate,
    make_model_input,
    train,
)


@pytest.fixture(scope="module")
def small_dataset():
    return synth_motion_dataset(6, (16, 16), Rng(21))


def _quick_config(**overrides):
    base = dict(
        epochs=3,
        batch_size=2,
        lr=1e-3,
        drop_prob=0.1,
        embed_dim=4,
        seed=5,
        val_fraction=0.2,
        log_every=10,
        checkpoint_every=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestMakeModelInput:
    def test_channel_layout(self, small_dataset):
        triplet = small_dataset.triplets[0]
        x = make_model_input(triplet)
        assert x.shape == (1, 6, 16, 16)
        assert np.array_equal(x.data[:, 0:3], triplet.frame_a.pixels.data)
        assert np.array_equal(x.data[:, 3:6], triplet.frame_b.pixels.data)

    def test_equal_frames_duplicate_channels(self):
        from frameweave.frames import FrameTriplet, Frame

        pixels = Rng(0).uniform((1, 3, 16, 16))
        t = FrameTriplet(Frame(pixels, 0), Frame(pixels, 1), Frame(pixels, 2))
        x = make_model_input(t)
        assert np.array_equal(x.data[:, 0:3], x.data[:, 3:6])

    def test_slicing_recovers_both_frames(self, small_dataset):
        triplet = small_dataset.triplets[1]
        x = make_model_input(triplet).data
        assert np.array_equal(x[:, 0:3], triplet.frame_a.pixels.data)
        assert np.array_equal(x[:, 3:6], triplet.frame_b.pixels.data)


class TestConfig:
    def test_epochs_zero_rejected(self):
        with pytest.raises(ParameterError):
            TrainConfig(epochs=0)

    def test_val_fraction_bounds(self):
        with pytest.raises(ParameterError):
            TrainConfig(val_fraction=0.0)
        with pytest.raises(ParameterError):
            TrainConfig(val_fraction=1.0)

    def test_text_round_trip(self):
        config = TrainConfig(epochs=7, lr=5e-4, optimizer="sgd", loss="encoding", seed=9)
        assert TrainConfig.from_text(config.to_text()) == config

    def test_file_parsing_with_comments(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# run settings\nepochs = 4\nlr = 0.002\noptimizer = 'sgd'\nlog_timing = true\n")
        config = TrainConfig.from_file(path)
        assert config.epochs == 4
        assert config.lr == 0.002
        assert config.optimizer == "sgd"
        assert config.log_timing is True

    def test_unknown_key_rejected(self):
        with pytest.raises(ParameterError):
            TrainConfig.from_text("warp_speed = 9\n")


class TestTrainLoop:
    def test_artifacts_written(self, small_dataset, tmp_path):
        rows, ckpt = train(_quick_config(), small_dataset, tmp_path)
        assert (tmp_path / "curve.csv").exists()
        assert (tmp_path / "curve.png").exists()
        assert (tmp_path / "checkpoint_final.fwck").exists()
        assert ckpt.epoch == 3

    def test_curve_epochs_contiguous(self, small_dataset, tmp_path):
        rows, _ = train(_quick_config(epochs=4), small_dataset, tmp_path)
        train_epochs = [r.epoch for r in rows if r.split == "train"]
        assert train_epochs == [1, 2, 3, 4]
        val_epochs = [r.epoch for r in rows if r.split == "val"]
        assert val_epochs == [1, 2, 3, 4]

    def test_curve_csv_header(self, small_dataset, tmp_path):
        train(_quick_config(), small_dataset, tmp_path)
        first = (tmp_path / "curve.csv").read_text().splitlines()[0]
        assert first == CURVE_HEADER

    def test_seconds_column_deterministic_by_default(self, small_dataset, tmp_path):
        # wall-clock opt-in keeps curve.csv byte-reproducible
        train(_quick_config(), small_dataset, tmp_path / "plain")
        rows = (tmp_path / "plain" / "curve.csv").read_text().strip().splitlines()[1:]
        assert all(line.endswith(",0.000") for line in rows)
        train(_quick_config(log_timing=True), small_dataset, tmp_path / "timed")
        timed = (tmp_path / "timed" / "curve.csv").read_text().strip().splitlines()[1:]
        assert any(not line.endswith(",0.000") for line in timed)

    def test_determinism_byte_identical(self, small_dataset, tmp_path):
        a_dir = tmp_path / "a"
        b_dir = tmp_path / "b"
        train(_quick_config(), small_dataset, a_dir)
        train(_quick_config(), small_dataset, b_dir)
        assert (a_dir / "curve.csv").read_bytes() == (b_dir / "curve.csv").read_bytes()
        assert (
            (a_dir / "checkpoint_final.fwck").read_bytes()
            == (b_dir / "checkpoint_final.fwck").read_bytes()
        )

    def test_resume_matches_uninterrupted(self, small_dataset, tmp_path):
        straight_dir = tmp_path / "straight"
        split_dir = tmp_path / "split"
        resumed_dir = tmp_path / "resumed"

        config4 = _quick_config(epochs=4, checkpoint_every=2)
        straight_rows, _ = train(config4, small_dataset, straight_dir)

        config2 = _quick_config(epochs=2, checkpoint_every=2)
        train(config2, small_dataset, split_dir)
        resumed_rows, _ = train(
            config4, small_dataset, resumed_dir, resume_from=split_dir / "checkpoint_final.fwck"
        )

        straight_tail = [r for r in straight_rows if r.epoch >= 3]
        assert len(resumed_rows) == len(straight_tail)
        for a, b in zip(resumed_rows, straight_tail):
            assert (a.epoch, a.split) == (b.epoch, b.split)
            assert a.mse_internal == b.mse_internal

        assert (
            (straight_dir / "checkpoint_final.fwck").read_bytes()
            == (resumed_dir / "checkpoint_final.fwck").read_bytes()
        )

    def test_periodic_checkpoints(self, small_dataset, tmp_path):
        train(_quick_config(epochs=4, checkpoint_every=2), small_dataset, tmp_path)
        assert (tmp_path / "ckpt_epoch_0002.fwck").exists()

    def test_single_triplet_dataset_trains(self, tmp_path):
        data = Dataset(synth_motion_dataset(1, (16, 16), Rng(3)).triplets)
        rows, _ = train(_quick_config(epochs=2), data, tmp_path)
        assert [r.split for r in rows] == ["train", "train"]  # no val split possible

    def test_overfit_loss_nonincreasing_after_warmup(self, tmp_path):
        # single triplet, dropout off: windowed non-increase within 1% slack
        data = synth_motion_dataset(1, (16, 16), Rng(13))
        config = _quick_config(epochs=120, drop_prob=0.0, embed_dim=8, batch_size=1)
        rows, _ = train(config, data, tmp_path)
        losses = [r.mse_internal for r in rows if r.split == "train"]
        for e in range(50, len(losses) - 50):
            assert losses[e + 50] <= losses[e] * 1.01, f"window {e} rose"


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    data = synth_motion_dataset(6, (16, 16), Rng(21))
    out = tmp_path_factory.mktemp("trained")
    _, ckpt = train(_quick_config(), data, out)
    return data, ckpt


class TestInterpolateEvaluate:
    def test_interpolate_shape_and_range(self, trained):
        data, ckpt = trained
        t = data.triplets[0]
        pred = interpolate(ckpt, t.frame_a, t.frame_b)
        assert (pred.height, pred.width) == (16, 16)
        assert pred.pixels.data.min() >= 0.0
        assert pred.pixels.data.max() <= 1.0

    def test_interpolate_deterministic(self, trained):
        data, ckpt = trained
        t = data.triplets[0]
        a = interpolate(ckpt, t.frame_a, t.frame_b)
        b = interpolate(ckpt, t.frame_a, t.frame_b)
        assert np.array_equal(a.pixels.data, b.pixels.data)

    def test_interpolate_dim_mismatch(self, trained):
        from frameweave.frames import Frame

        data, ckpt = trained
        other = Frame(Tensor.full((1, 3, 8, 8), 0.5), 5)
        with pytest.raises(ShapeError):
            interpolate(ckpt, data.triplets[0].frame_a, other)

    def test_evaluate_writes_reports(self, trained, tmp_path):
        data, ckpt = trained
        summary = evaluate(ckpt, data, tmp_path, num_images=2)
        assert (tmp_path / "eval.csv").exists()
        assert (tmp_path / "eval_mse.png").exists()
        assert (tmp_path / "compare_0000.png").exists()
        assert (tmp_path / "compare_0001.png").exists()
        assert not (tmp_path / "compare_0002.png").exists()
        assert summary["aggregate_mse"] >= 0

    def test_comparison_image_width(self, trained, tmp_path):
        data, ckpt = trained
        evaluate(ckpt, data, tmp_path, num_images=1)
        comparison = read_frame(tmp_path / "compare_0000.png")
        assert comparison.width == 2 * 16
        evaluate(ckpt, data, tmp_path, num_images=1, separator=True)
        with_sep = read_frame(tmp_path / "compare_0000.png")
        assert with_sep.width == 2 * 16 + 1

    def test_aggregate_is_mean_of_rows(self, trained, tmp_path):
        data, ckpt = trained
        evaluate(ckpt, data, tmp_path, num_images=0)
        lines = (tmp_path / "eval.csv").read_text().strip().splitlines()[1:]
        per = [float(ln.split(",")[1]) for ln in lines[:-1]]
        aggregate = float(lines[-1].split(",")[1])
        assert aggregate == pytest.approx(np.mean(per), abs=1e-6)

    def test_ground_truth_against_itself(self, trained, tmp_path):
        # sanity mode: evaluating a dataset whose prediction equals truth
        data, ckpt = trained
        t = data.triplets[0]
        value = mse_pixel(t.frame_mid.pixels, t.frame_mid.pixels).value
        assert value == 0.0
        from frameweave.losses import psnr

        assert psnr(t.frame_mid.pixels, t.frame_mid.pixels) == 99.0


class TestNonFiniteAbort:
    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
    def test_diverged_loss_names_epoch_and_batch(self, small_dataset, tmp_path):
        from frameweave.errors import NumericError

        # a huge learning rate reliably overflows float32 within a few epochs
        config = _quick_config(epochs=30, lr=1e18, optimizer="sgd", drop_prob=0.0)
        with pytest.raises(NumericError, match=r"epoch \d+ batch \d+"):
            train(config, small_dataset, tmp_path)


class TestCli:
    def test_synth_train_eval_interpolate_pipeline(self, tmp_path):
        data_dir = tmp_path / "data"
        run_dir = tmp_path / "run"
        eval_dir = tmp_path / "eval"

        assert cli_main([
            "synth", "--count", "4", "--size", "16x16", "--seed", "3", "--out", str(data_dir), "--pack",
        ]) == 0
        assert (data_dir / "frame_000011.ppm").exists()
        assert (data_dir / "dataset.fwds").exists()

        assert cli_main([
            "train", "--data", str(data_dir / "dataset.fwds"), "--out", str(run_dir),
            "--epochs", "2", "--embed-dim", "4", "--batch-size", "2", "--seed", "1",
        ]) == 0
        ckpt_path = run_dir / "checkpoint_final.fwck"
        assert ckpt_path.exists()

        assert cli_main([
            "eval", "--ckpt", str(ckpt_path), "--data", str(data_dir / "dataset.fwds"),
            "--out", str(eval_dir), "--images", "1",
        ]) == 0
        assert (eval_dir / "eval.csv").exists()

        out_img = tmp_path / "mid.png"
        assert cli_main([
            "interpolate", "--ckpt", str(ckpt_path),
            "--a", str(data_dir / "frame_000000.ppm"),
            "--b", str(data_dir / "frame_000002.ppm"),
            "--out", str(out_img),
        ]) == 0
        assert read_frame(out_img).width == 16

    def test_train_from_frame_dir_with_stride(self, tmp_path):
        data_dir = tmp_path / "data"
        cli_main(["synth", "--count", "3", "--size", "16x16", "--seed", "4", "--out", str(data_dir)])
        run_dir = tmp_path / "run"
        code = cli_main([
            "train", "--data", str(data_dir), "--stride", "3", "--out", str(run_dir),
            "--epochs", "1", "--embed-dim", "4", "--seed", "2",
        ])
        assert code == 0

    def test_gradcheck_command(self, capsys):
        assert cli_main(["gradcheck", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert "network_7layer" in out
        assert "FAIL" not in out

    def test_missing_checkpoint_is_reported(self, tmp_path, capsys):
        code = cli_main([
            "interpolate", "--ckpt", str(tmp_path / "nope.fwck"),
            "--a", "x.ppm", "--b", "y.ppm", "--out", "z.ppm",
        ])
        assert code != 0
