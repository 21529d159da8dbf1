import json

import numpy as np
import pytest

import conceptbp
from conceptbp import board, pipeline


def test_board_round_trip_and_oracle():
    text = board.starting_position()
    planes = board.encode(text)
    assert planes.shape == (11, 6, 6)
    assert set(np.unique(planes)) <= {0.0, 1.0}
    assert board.decode(planes) == text
    assert board.is_legal(text)
    assert board.legality_violations(text) == []


def test_generated_boards_are_legal():
    for text in board.generate(50, 7):
        assert board.is_legal(text)


def test_malformed_board_raises_format_error():
    with pytest.raises(conceptbp.FormatError):
        board.encode("not a board")


def test_pgm_round_trip():
    image = np.linspace(0.0, 1.0, 28 * 28).reshape(1, 28, 28)
    back = conceptbp.parse_pgm(conceptbp.format_pgm(image, "manifest: manifest.json"))
    assert back.shape == (1, 28, 28)
    assert np.max(np.abs(back - image)) <= 0.5 / 255 + 1e-12


def test_unknown_config_key_is_named():
    with pytest.raises(conceptbp.ConfigError, match="bogus"):
        pipeline.parse_config(json.dumps({"pipeline": "toy", "bogus": 1}))


def test_toy_pipeline_end_to_end(tmp_path):
    config = pipeline.parse_config(json.dumps({
        "pipeline": "toy",
        "seed": 3,
        "data": {"samples": 200},
        "probe": {"tap": "input", "lambda": 0.0,
                  "train": {"learning_rate": 0.01, "batch_size": 32, "epochs": 200}},
        "maximise": {"lambda2": 0.5, "target_offset": 1.5, "count": 3},
    }))
    pipeline.train(config, tmp_path)
    report = pipeline.probe(config, tmp_path)
    assert report["kind"] == "scalar"
    assert report["r2"] > 0.99

    runs = pipeline.maximise(config, tmp_path)
    assert len(runs) == 3
    for run in runs:
        assert run["status"] == "converged"
        assert abs(run["probe_output"] - (run["initial_probe"] + 1.5)) <= 0.05 + 1e-9

    model = conceptbp.Model.load(tmp_path / "train" / "model.bin")
    probe = conceptbp.Probe.load(tmp_path / "probe" / "probe.txt")
    result = conceptbp.maximise_tabular(model, probe, np.array([0.2, -0.4]),
                                        {"target": 1.0, "lambda2": 0.5})
    assert result["status"] == "converged"
    assert result["perturbed"].shape == (2,)
    assert (tmp_path / "maximise" / "manifest.json").exists()
