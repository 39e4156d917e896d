"""Bundle export, engine-side validation, parity and the negative control."""

import subprocess
import sys

import numpy as np
import pytest
import torch

from trainkit import export, training
from trainkit.models import AcousticModel, ConversionModel, FrameRateNet, SampleRateNet


@pytest.fixture(scope="module")
def untrained_models():
    torch.manual_seed(0)
    acoustic = AcousticModel(5, (32, 32), (64, 64))
    conversion = ConversionModel(64, 4)
    frame_net = FrameRateNet()
    sample_net = SampleRateNet()
    return acoustic, conversion, frame_net, sample_net


@pytest.fixture(scope="module")
def bundle_file(untrained_models, tmp_path_factory):
    path = tmp_path_factory.mktemp("export") / "bundle.svx"
    export.write_bundle(export.bundle_layers(*untrained_models), path)
    return path


class TestRoundTrip:
    def test_trainkit_reader_roundtrip(self, untrained_models, bundle_file):
        raw = export.read_bundle(bundle_file)
        assert set(raw) == {"acoustic", "conversion", "frame_rate", "sample_rate"}
        expected = export.bundle_layers(*untrained_models)
        for model_name, layers in expected.items():
            for exp, got in zip(layers, raw[model_name]):
                assert exp["name"] == got["name"]
                for a, b in zip(exp["tensors"], got["tensors"]):
                    assert np.array_equal(a, b)

    def test_engine_loads_fragment(self, untrained_models, tmp_path):
        # a bundle holding only the acoustic model must pass engine validation
        acoustic = untrained_models[0]
        path = tmp_path / "fragment.svx"
        export.write_bundle(export.bundle_layers(acoustic=acoustic), path)
        proc = subprocess.run(
            [sys.executable, "-c",
             "import sys; from streamvox import nn; "
             f"b = nn.load_bundle_file({str(path)!r}); print(b.ppg_dim)"],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert proc.stdout.strip() == "64"

    def test_models_from_bundle_identical_forward(self, untrained_models, bundle_file):
        reloaded = export.models_from_bundle(bundle_file)
        x = torch.randn(1, 6, 39)
        with torch.no_grad():
            a = untrained_models[0](x)[0]
            b = reloaded[0](x)[0]
        assert torch.equal(a, b)


class TestParity:
    def test_within_tolerance(self, untrained_models, bundle_file):
        report = export.parity_report(bundle_file, *untrained_models, seed=1)
        assert set(report) == {"acoustic", "conversion", "frame_rate", "sample_rate"}
        for model_name, diff in report.items():
            assert diff <= export.PARITY_TOLERANCE, (model_name, diff)

    def test_trained_stack_parity(self, trained_stack):
        path = trained_stack["dir"] / "trained.svx"
        models = (trained_stack["acoustic"], trained_stack["conversion"],
                  trained_stack["frame_net"], trained_stack["sample_net"])
        export.write_bundle(export.bundle_layers(*models), path)
        report = export.check_parity(path, *models, seed=2)
        print("SECONDARY ACCEPTANCE: export parity max abs diff per model:",
              {k: f"{v:.2e}" for k, v in report.items()})
        assert max(report.values()) <= export.PARITY_TOLERANCE

    def test_negative_control_swapped_gates_detected(self, untrained_models, tmp_path):
        path = tmp_path / "swapped.svx"
        export.write_bundle(
            export.bundle_layers(*untrained_models, swap_lstm_gates=True), path)
        acoustic = untrained_models[0]
        with pytest.raises(RuntimeError) as err:
            export.check_parity(path, *untrained_models, seed=3)
        assert "lstm_1" in str(err.value)
        # and the raw parity numbers really are out of tolerance
        report = export.parity_report(path, *untrained_models, seed=3)
        assert report["acoustic"] > export.PARITY_TOLERANCE
        print(f"SECONDARY ACCEPTANCE: negative control detected "
              f"(acoustic diff {report['acoustic']:.3g})")
