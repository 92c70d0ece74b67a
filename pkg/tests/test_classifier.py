import json
import sys
import threading
import time

import numpy as np
import pytest

from depthdet.classifier import (
    DEFAULT_PALETTE,
    ClassScore,
    ExternalClassifier,
    StubClassifier,
    classify_all,
    external_classify,
    filter_by_lambda,
    format_palette,
    parse_palette,
    stub_classify,
)
from depthdet.exceptions import BackendError, BackendTimeoutError, ConfigError, ProtocolError
from depthdet.pointcloud_io import BBox2D, Image
from depthdet.proposal import Proposal

PY = sys.executable


def _child(code):
    return [PY, "-c", code]


def _solid(rgb, w=6, h=4):
    return Image.blank(w, h, rgb)


def test_palette_is_well_separated():
    colors = np.array(list(DEFAULT_PALETTE.values()), dtype=float)
    d = np.linalg.norm(colors[:, None] - colors[None], axis=2)
    assert d[np.triu_indices(3, 1)].min() >= 200


def test_exact_palette_color_wins():
    for label, rgb in DEFAULT_PALETTE.items():
        scores = stub_classify(_solid(rgb))
        assert scores[0].label == label and scores[0].prob > 0.9
        assert sum(s.prob for s in scores) == pytest.approx(1.0)


def test_single_label_palette():
    (s,) = stub_classify(_solid((1, 2, 3)), {"only": (200, 0, 0)})
    assert s == ClassScore("only", 1.0)


def test_equidistant_mean_gives_equal_probs():
    scores = stub_classify(_solid((100, 100, 100)), {"a": (100, 0, 100), "b": (100, 200, 100)})
    assert [s.prob for s in scores] == [0.5, 0.5]
    assert [s.label for s in scores] == ["a", "b"]


def test_empty_palette_is_config_error():
    with pytest.raises(ConfigError):
        stub_classify(_solid((0, 0, 0)), {})


def test_backends_are_deterministic():
    img = Image(np.random.default_rng(3).integers(0, 256, (9, 7, 3), dtype=np.uint8))
    assert StubClassifier().classify(img) == StubClassifier().classify(img)


def test_external_pass_through():
    cmd = _child("import sys; sys.stdin.buffer.read(); print('[{\"label\": \"cup\", \"prob\": 0.8}]')")
    assert external_classify(_solid((0, 0, 0)), cmd) == [ClassScore("cup", 0.8)]


def test_external_receives_ppm():
    code = (
        "import sys, json; d = sys.stdin.buffer.read(); "
        "print(json.dumps([{'label': d[:11].decode().replace(chr(10), '|'), 'prob': 1.0}]))"
    )
    (s,) = external_classify(_solid((5, 5, 5), 6, 4), _child(code))
    assert s.label == "P6|6 4|255|"


def test_external_string_command_is_split_without_shell(tmp_path):
    script = tmp_path / "clf.py"
    script.write_text("import sys; sys.stdin.buffer.read(); print('[]')\n")
    assert external_classify(_solid((0, 0, 0)), f"{PY} {script}") == []


def test_external_prob_out_of_range():
    with pytest.raises(ProtocolError):
        external_classify(_solid((0, 0, 0)), _child("print('[{\"label\": \"x\", \"prob\": 1.5}]')"))


def test_external_malformed_json():
    with pytest.raises(ProtocolError):
        external_classify(_solid((0, 0, 0)), _child("print('not json')"))


def test_external_nonzero_exit_carries_stderr():
    with pytest.raises(BackendError) as err:
        external_classify(_solid((0, 0, 0)), _child("import sys; sys.stderr.write('model missing'); sys.exit(1)"))
    assert "model missing" in str(err.value)
    assert not isinstance(err.value, ProtocolError)


def test_external_timeout():
    with pytest.raises(BackendTimeoutError):
        external_classify(_solid((0, 0, 0)), _child("import time; time.sleep(5)"), timeout_s=0.3)


def test_external_missing_program():
    with pytest.raises(BackendError):
        ExternalClassifier(["/nonexistent/classifier"]).classify(_solid((0, 0, 0)))


class _SlowFirst:
    """Finishes later for earlier images so completion order is reversed."""

    def __init__(self):
        self.active = 0
        self.peak = 0
        self.lock = threading.Lock()

    def classify(self, img):
        with self.lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(0.02 * (10 - int(img.pixels[0, 0, 0])))
        with self.lock:
            self.active -= 1
        return [ClassScore(str(int(img.pixels[0, 0, 0])), 1.0)]


def test_classify_all_preserves_order_and_bounds_pool():
    backend = _SlowFirst()
    images = [_solid((k, 0, 0)) for k in range(8)]
    out = classify_all(backend, images, max_workers=3)
    assert [s[0].label for s in out] == [str(k) for k in range(8)]
    assert backend.peak <= 3


def _scored(*probs):
    return [(Proposal(BBox2D(0, 0, 2, 2), k, 1), [ClassScore("a", p)]) for k, p in enumerate(probs)]


def test_lambda_boundary():
    kept = filter_by_lambda(_scored(0.19, 0.2, 0.21), 0.2)
    assert [d.prob for d in kept] == [0.2, 0.21]
    assert [d.cluster_id for d in kept] == [1, 2]


def test_lambda_zero_keeps_everything():
    assert len(filter_by_lambda(_scored(0.0, 0.3, 1.0), 0.0)) == 3


def test_lambda_range_checked():
    with pytest.raises(ConfigError):
        filter_by_lambda([], 1.1)


def test_palette_text_round_trip():
    assert parse_palette(format_palette(DEFAULT_PALETTE)) == DEFAULT_PALETTE
    with pytest.raises(ConfigError):
        parse_palette("red:1,2")
    with pytest.raises(ConfigError):
        parse_palette("a:1,2,3 b:1,2,3")


def test_protocol_rejects_probabilities_summing_above_one():
    payload = json.dumps([{"label": "a", "prob": 0.7}, {"label": "b", "prob": 0.7}])
    with pytest.raises(ProtocolError):
        external_classify(_solid((0, 0, 0)), _child(f"print({payload!r})"))
