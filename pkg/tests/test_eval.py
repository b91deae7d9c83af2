import numpy as np
import pytest

from dfpn.data import FrameSequence, SyntheticSpec, generate_synthetic
from dfpn.evaluate import (
    PSNR_CAP_DB,
    CheckpointError,
    EvalReport,
    load_checkpoint,
    predict_sequence,
    psnr,
    run_protocol,
    save_checkpoint,
    write_report,
)
from dfpn.model import ModelConfig, init_parameters
from dfpn.optim import TrainState

SMALL = ModelConfig(
    base_channels=16, feat_rdbs=1, bottleneck_rdbs=2, recon_rdbs=1, rdb_depth=3, rdb_growth=8
)


class TestPsnr:
    def test_identical_frames_hit_cap(self):
        f = np.random.default_rng(0).uniform(0, 1, size=(8, 8))
        assert psnr(f, f.copy()) == PSNR_CAP_DB

    def test_maximal_error_is_zero_db(self):
        assert psnr(np.ones((4, 4)), np.zeros((4, 4))) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_thirty_db(self):
        # 8x5 frame, one pixel off by 51 levels: MSE = 51^2/40 = 65.025,
        # PSNR = 10*log10(65025/65.025) = 30 dB exactly
        gt = np.zeros((8, 5))
        pred = np.zeros((8, 5))
        pred[0, 0] = 51.0 / 255.0
        assert psnr(pred, gt) == pytest.approx(30.0, abs=1e-12)

    def test_rounding_to_8bit_before_comparison(self):
        gt = np.zeros((4, 4))
        pred = np.full((4, 4), 0.4 / 255.0)  # rounds to 0: identical after quantisation
        assert psnr(pred, gt) == PSNR_CAP_DB

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))


def copy_last(window):
    return window[-1]


class TestProtocol:
    def test_copy_last_predictor_equals_baseline_column(self):
        rng = np.random.default_rng(1)
        seq = FrameSequence(frames=rng.uniform(0, 1, size=(9, 12, 12)).astype(np.float32), source="mem")
        report = run_protocol(seq, 4, copy_last)
        for _, p, base in report.rows:
            assert p == base

    def test_rows_cover_every_predictable_frame(self):
        rng = np.random.default_rng(2)
        seq = FrameSequence(frames=rng.uniform(0, 1, size=(11, 8, 8)).astype(np.float32), source="mem")
        report = run_protocol(seq, 4, copy_last)
        assert [r[0] for r in report.rows] == list(range(4, 11))

    def test_static_sequence_caps_every_row(self):
        frame = np.random.default_rng(3).uniform(0, 1, size=(8, 8)).astype(np.float32)
        seq = FrameSequence(frames=np.tile(frame, (7, 1, 1)), source="mem")
        report = run_protocol(seq, 4, copy_last)
        assert all(p == PSNR_CAP_DB and b == PSNR_CAP_DB for _, p, b in report.rows)
        assert report.capped_frames == [4, 5, 6]
        assert report.mean_psnr == PSNR_CAP_DB

    def test_mean_excludes_capped_rows(self):
        report = EvalReport(rows=[(4, 30.0, 20.0), (5, PSNR_CAP_DB, 20.0), (6, 40.0, 20.0)], mean_psnr=0, mean_baseline_psnr=0)
        # recompute the way run_protocol does
        uncapped = [p for _, p, _ in report.rows if p < PSNR_CAP_DB]
        assert abs(np.mean(uncapped) - 35.0) < 1e-9

    def test_fresh_model_on_moving_sequence_is_finite(self):
        seq = generate_synthetic(SyntheticSpec("noise", (0.0, 1.0), 7, (24, 24), seed=4))
        params = init_parameters(SMALL, 0)
        report = predict_sequence(seq, SMALL, params)
        assert len(report.rows) == 3
        for _, p, base in report.rows:
            assert np.isfinite(p) and np.isfinite(base)

    def test_sequence_too_short(self):
        seq = FrameSequence(frames=np.zeros((4, 8, 8), dtype=np.float32), source="mem")
        with pytest.raises(ValueError, match="4 frames"):
            run_protocol(seq, 4, copy_last)

    def test_report_csv_format(self, tmp_path):
        report = EvalReport(rows=[(4, 31.5, 28.25), (5, 99.0, 30.0)], mean_psnr=31.5, mean_baseline_psnr=29.125)
        path = tmp_path / "report.csv"
        write_report(path, report)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "frame,psnr_db,baseline_psnr_db"
        assert lines[1].startswith("4,31.5")
        assert len(lines) == 3


class TestCheckpoint:
    def test_round_trip_is_bitwise(self, tmp_path):
        params = init_parameters(SMALL, 7)
        path = tmp_path / "m.dfpn"
        save_checkpoint(path, SMALL, params)
        cfg2, params2, state2 = load_checkpoint(path)
        assert cfg2 == SMALL
        assert state2 is None
        assert set(params2) == set(params)
        for k in params:
            assert np.array_equal(params2[k], params[k]), k
            assert params2[k].dtype == np.float32

    def test_round_trip_with_state(self, tmp_path):
        params = init_parameters(SMALL, 8)
        state = TrainState.fresh(params, base_lr=2e-4)
        state.t = 1234
        state.m = {k: np.full_like(v, 0.25) for k, v in params.items()}
        path = tmp_path / "s.dfpn"
        save_checkpoint(path, SMALL, params, state)
        _, _, state2 = load_checkpoint(path)
        assert state2.t == 1234
        assert state2.base_lr == 2e-4
        assert all(np.array_equal(state2.m[k], state.m[k]) for k in params)
        assert all(np.array_equal(state2.v[k], state.v[k]) for k in params)

    def test_single_corrupt_byte_detected(self, tmp_path):
        params = init_parameters(SMALL, 9)
        path = tmp_path / "c.dfpn"
        save_checkpoint(path, SMALL, params)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0x40
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="c.dfpn.*corrupt"):
            load_checkpoint(path)

    def test_bad_magic_and_version(self, tmp_path):
        params = init_parameters(SMALL, 10)
        path = tmp_path / "v.dfpn"
        save_checkpoint(path, SMALL, params)
        blob = bytearray(path.read_bytes())
        import struct
        import zlib

        blob[4:8] = struct.pack("<I", 999)
        body = bytes(blob[:-4])
        path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)
        other = tmp_path / "not.dfpn"
        other.write_bytes(b"JUNKJUNKJUNKJUNK")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(other)

    def test_name_set_mismatch_lists_names(self, tmp_path):
        params = init_parameters(SMALL, 11)
        other_cfg = ModelConfig(
            base_channels=16, feat_rdbs=2, bottleneck_rdbs=2, recon_rdbs=1, rdb_depth=3, rdb_growth=8
        )
        path = tmp_path / "mm.dfpn"
        # the writer serialises whatever it is given; the loader validates
        save_checkpoint(path, other_cfg, params)
        with pytest.raises(CheckpointError, match="missing.*feat.rdb1"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="nope.dfpn"):
            load_checkpoint(tmp_path / "nope.dfpn")
