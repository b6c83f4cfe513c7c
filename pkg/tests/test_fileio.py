import numpy as np
import numpy.testing as npt
import pytest

from polysed import fileio
from polysed.detection import DetectedEvent
from polysed.evaluation import ContextScores, EvalReport
from polysed.features import BandNormalizer, MelSpectrogram
from polysed.network import init_network, param_items
from polysed.sequences import EventAnnotation


class TestWav:
    def test_round_trip_mono(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = np.clip(rng.normal(0, 0.3, size=16000), -1, 1)
        path = tmp_path / "x.wav"
        fileio.write_wav(path, samples, 16000)
        clip = fileio.read_wav(path, context_id="c", recording_id="r")
        assert clip.sample_rate == 16000
        assert clip.context_id == "c"
        npt.assert_allclose(clip.samples, samples, atol=1.0 / 32767)

    def test_stereo_averaged(self, tmp_path):
        from scipy.io import wavfile

        left = np.full(100, 0.5)
        right = np.full(100, -0.5)
        stereo = (np.stack([left, right], axis=1) * 32767).astype(np.int16)
        wavfile.write(tmp_path / "s.wav", 8000, stereo)
        clip = fileio.read_wav(tmp_path / "s.wav")
        npt.assert_allclose(clip.samples, 0.0, atol=1e-4)


class TestFeatureFormat:
    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        spec = MelSpectrogram(
            values=rng.normal(size=(57, 40)),
            frame_hop_s=0.025,
            frame_len_s=0.05,
            context_id="office",
            recording_id="office_rec03",
        )
        path = tmp_path / "x.feat"
        fileio.save_features(path, spec)
        loaded = fileio.load_features(path)
        npt.assert_array_equal(loaded.values, spec.values)
        assert loaded.frame_hop_s == spec.frame_hop_s
        assert loaded.context_id == "office"
        assert loaded.recording_id == "office_rec03"

    def test_header_is_single_ascii_line(self, tmp_path):
        spec = MelSpectrogram(values=np.zeros((2, 3)), context_id="c", recording_id="r")
        path = tmp_path / "x.feat"
        fileio.save_features(path, spec)
        first = open(path, "rb").readline().decode("ascii")
        assert first == "POLYSED-FEAT v1,2,3,0.025,c,r\n"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.feat"
        path.write_bytes(b"NOT-A-FEAT,1,1,0.025,c,r\n" + b"\x00" * 8)
        with pytest.raises(ValueError, match="not a POLYSED-FEAT"):
            fileio.load_features(path)

    def test_truncated_payload_rejected(self, tmp_path):
        spec = MelSpectrogram(values=np.zeros((4, 4)))
        path = tmp_path / "x.feat"
        fileio.save_features(path, spec)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValueError, match="expected"):
            fileio.load_features(path)


class TestModelFormat:
    def make_net(self):
        net = init_network(6, (4, 4), 3, rng_seed=5)
        net.normalizer = BandNormalizer(
            means=np.random.default_rng(0).normal(size=6),
            std_devs=np.abs(np.random.default_rng(1).normal(size=6)) + 0.5,
        )
        net.class_names = [f"class{i}" for i in range(3)]
        return net

    def test_bit_exact_round_trip(self, tmp_path):
        net = self.make_net()
        config = {"eta": 0.005, "cells_per_layer": [4, 4]}
        path = tmp_path / "m.model"
        fileio.save_model(path, net, config)
        loaded, loaded_config = fileio.load_model(path)
        assert loaded_config == config
        assert loaded.class_names == net.class_names
        assert loaded.cells_per_layer == net.cells_per_layer
        for (na, pa), (nb, pb) in zip(param_items(net), param_items(loaded)):
            assert na == nb
            npt.assert_array_equal(pa, pb)
        npt.assert_array_equal(loaded.normalizer.means, net.normalizer.means)
        npt.assert_array_equal(loaded.normalizer.std_devs, net.normalizer.std_devs)

    def test_save_is_deterministic(self, tmp_path):
        net = self.make_net()
        fileio.save_model(tmp_path / "a.model", net, {"seed": 1})
        fileio.save_model(tmp_path / "b.model", net, {"seed": 1})
        assert (tmp_path / "a.model").read_bytes() == (tmp_path / "b.model").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.model"
        path.write_bytes(b"whatever\n")
        with pytest.raises(ValueError, match="not a POLYSED-MODEL"):
            fileio.load_model(path)


class TestCsvFormats:
    def test_class_map_round_trip(self, tmp_path):
        names = ["speech", "music", "car"]
        path = tmp_path / "classes.csv"
        fileio.write_class_map(path, names)
        assert fileio.read_class_map(path) == names

    def test_class_map_requires_contiguous_ids(self, tmp_path):
        path = tmp_path / "classes.csv"
        path.write_text("class_name,class_id\na,0\nb,2\n")
        with pytest.raises(ValueError, match="contiguous"):
            fileio.read_class_map(path)

    def test_annotations_round_trip(self, tmp_path):
        names = ["a", "b"]
        events = [
            EventAnnotation(onset_s=0.25, offset_s=1.5, class_id=0, recording_id="r0"),
            EventAnnotation(onset_s=0.1, offset_s=0.2, class_id=1, recording_id="r1"),
        ]
        contexts = {"r0": "ctx0", "r1": "ctx1"}
        path = tmp_path / "ann.csv"
        fileio.write_annotations(path, events, names, contexts)
        loaded, loaded_contexts = fileio.read_annotations(path, names)
        assert loaded_contexts == contexts
        assert [(e.recording_id, e.onset_s, e.offset_s, e.class_id) for e in loaded] == [
            (e.recording_id, e.onset_s, e.offset_s, e.class_id) for e in events
        ]

    def test_annotations_header(self, tmp_path):
        path = tmp_path / "ann.csv"
        fileio.write_annotations(path, [], ["a"], {})
        assert (
            path.read_text().splitlines()[0]
            == "recording_id,context_id,onset_s,offset_s,class_name"
        )

    def test_unknown_class_rejected(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text(
            "recording_id,context_id,onset_s,offset_s,class_name\nr,c,0.0,1.0,ghost\n"
        )
        with pytest.raises(ValueError, match="unknown class"):
            fileio.read_annotations(path, ["a"])

    def test_fold_map_round_trip(self, tmp_path):
        fold_map = {"r0": 0, "r1": 1, "r2": 0}
        path = tmp_path / "folds.csv"
        fileio.write_fold_map(path, fold_map)
        assert fileio.read_fold_map(path) == fold_map

    def test_detections_round_trip_sorted(self, tmp_path):
        names = ["a", "b"]
        events = [
            DetectedEvent(class_id=1, onset_s=0.5, offset_s=0.8, recording_id="r1"),
            DetectedEvent(class_id=0, onset_s=0.1, offset_s=0.3, recording_id="r0"),
        ]
        path = tmp_path / "det.csv"
        fileio.write_detections(path, events, names)
        lines = path.read_text().splitlines()
        assert lines[0] == "recording_id,class_name,onset_s,offset_s"
        assert lines[1].startswith("r0,")
        loaded = fileio.read_detections(path, names)
        assert len(loaded) == 2
        assert loaded[0].recording_id == "r0"
        assert loaded[0].onset_s == 0.1

    def test_report_csv_and_table(self, tmp_path):
        report = EvalReport(
            contexts=[
                ContextScores("beach", 0.5, 0.6, 1, 2, 3, 4, 5, 6),
                ContextScores("office", 0.7, 0.8, 1, 2, 3, 4, 5, 6),
            ],
            overall_f1_avgframe=0.6,
            overall_f1_1sec=0.7,
        )
        fileio.write_report_csv(tmp_path / "r.csv", report)
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "context,f1_avgframe,f1_1sec"
        assert lines[-1].startswith("average,")
        fileio.write_report_table(tmp_path / "r.txt", report)
        table = (tmp_path / "r.txt").read_text()
        assert "office" in table and "average" in table and "%" in table
