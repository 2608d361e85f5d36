import sys
import os

sys.path.append(os.path.join(os.path.dirname(__file__), os.pardir))

import json

import numpy as np
import pytest
import torch

from vidmask.custom_exception import FormatError
from vidmask.detector import Detection
from vidmask.formats import (
    AnnotationSet,
    FrameAnnotation,
    MaskWriter,
    config_fields,
    config_from_fields,
    load_json,
    load_weights,
    read_annotations,
    read_detections,
    read_frames,
    read_mask,
    read_pgm,
    read_tensors,
    save_features,
    save_weights,
    write_annotations,
    write_detections,
    write_frames,
    write_heatmap_pgm,
    write_pgm,
    write_tensors,
)
from vidmask.mask_builder import BBox, GridSpec, Heatmap, RegionMask
from vidmask.toy_vit import ModelConfig, ReferenceState, build_model, forward_dense


def test_annotations_round_trip(tmp_path):
    annotations = AnnotationSet(
        (128, 256),
        [
            FrameAnnotation(0, [BBox(0, 0, 16, 16), BBox(10, 20, 30, 40)], [0, 1]),
            FrameAnnotation(1, []),
        ],
    )
    path = write_annotations(annotations, str(tmp_path / "annotations.json"))
    assert read_annotations(path) == annotations
    with open(path) as f:
        assert json.load(f)["frames"][0]["boxes"][1] == [10, 20, 30, 40]


def test_annotations_reject_bad_box(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"frame_size": [64, 64], "frames": [{"index": 0, "boxes": [[0, 0, 4]]}]}))
    with pytest.raises(FormatError, match="does not have 4 coordinates"):
        read_annotations(str(path))


def test_annotations_reject_class_count(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"frame_size": [64, 64], "frames": [{"index": 0, "boxes": [[0, 0, 4, 4]], "classes": [0, 1]}]}))
    with pytest.raises(FormatError):
        read_annotations(str(path))


def test_annotations_reject_missing_keys(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"frames": []}))
    with pytest.raises(FormatError, match="not an annotation document"):
        read_annotations(str(path))


def test_malformed_json_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"frame_size": [64, 64],\n "frames": [}')
    with pytest.raises(FormatError) as e:
        load_json(str(path))
    assert str(path) in e.value.message
    assert "line 2" in e.value.message


def test_missing_file_is_format_error(tmp_path):
    with pytest.raises(FormatError):
        load_json(str(tmp_path / "absent.json"))


def test_mask_json_round_trip(tmp_path):
    spec = GridSpec((64, 96), 16)
    mask = RegionMask.from_locations([0, 5, 23], spec)
    path = MaskWriter().write(mask, str(tmp_path / "mask.json"), "json")
    assert read_mask(path) == mask
    assert load_json(path)["keep_count"] == 3


def test_mask_pgm_export(tmp_path):
    spec = GridSpec((32, 48), 16)
    mask = RegionMask.from_locations([1, 3], spec)
    path = MaskWriter().write(mask, str(tmp_path / "mask.pgm"), "pgm")
    assert read_pgm(path).tolist() == [[0, 255, 0], [255, 0, 0]]


def test_mask_writer_rejects_unknown_type(tmp_path):
    with pytest.raises(FormatError, match="not supported"):
        MaskWriter().write(RegionMask.empty(GridSpec((16, 16), 16)), str(tmp_path / "mask.png"), "png")


def test_pgm_round_trip_with_whitespace_bytes(tmp_path):
    image = np.array([[10, 32, 9], [13, 0, 255]], dtype=np.uint8)
    assert np.array_equal(read_pgm(write_pgm(image, str(tmp_path / "a.pgm"))), image)


def test_read_pgm_rejects_other_formats(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(FormatError):
        read_pgm(str(path))


def test_heatmap_pgm_scaling(tmp_path):
    values = np.array([[0, 1], [2, 4]], dtype=np.int64)
    image = read_pgm(write_heatmap_pgm(Heatmap(values), str(tmp_path / "h.pgm")))
    assert image.tolist() == [[0, 64], [128, 255]]
    blank = read_pgm(write_heatmap_pgm(Heatmap(np.zeros((2, 3), dtype=np.int64)), str(tmp_path / "z.pgm")))
    assert blank.shape == (2, 3) and not blank.any()


def test_frames_round_trip(tmp_path):
    frames = np.random.default_rng(0).integers(0, 256, size=(3, 32, 48, 3), dtype=np.uint8)
    path = write_frames(frames, str(tmp_path / "frames.mvdf"))
    assert os.path.getsize(path) == 20 + frames.size
    assert np.array_equal(read_frames(path), frames)


def test_frames_reject_bad_container(tmp_path):
    path = tmp_path / "frames.mvdf"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(FormatError, match="not an MVDF"):
        read_frames(str(path))
    frames = np.zeros((2, 16, 16, 3), dtype=np.uint8)
    write_frames(frames, str(path))
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FormatError, match="expected"):
        read_frames(str(path))
    with pytest.raises(FormatError):
        write_frames(np.zeros((2, 16, 16), dtype=np.uint8), str(path))


def test_tensor_container(tmp_path):
    tensors = {"a": torch.arange(6, dtype=torch.float32).reshape(2, 3), "scalar_row": torch.tensor([1.5])}
    path = write_tensors({"x": -3, "big": 1 << 40}, tensors, str(tmp_path / "t.mvdt"))
    fields, loaded = read_tensors(path)
    assert fields == {"x": -3, "big": 1 << 40}
    assert list(loaded) == ["a", "scalar_row"]
    assert torch.equal(loaded["a"], tensors["a"])


def test_tensor_container_rejects_damage(tmp_path):
    path = tmp_path / "t.mvdt"
    write_tensors({}, {"a": torch.zeros(4)}, str(path))
    data = path.read_bytes()
    path.write_bytes(data + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        read_tensors(str(path))
    path.write_bytes(data[:-3])
    with pytest.raises(FormatError, match="truncated"):
        read_tensors(str(path))


def test_config_fields_round_trip():
    for config in (ModelConfig.vit_b(), ModelConfig.vit_b(windowed=False), ModelConfig.toy(seed=7)):
        assert config_from_fields(config_fields(config), "<memory>") == config


def test_weights_round_trip_preserves_outputs(tmp_path):
    model = build_model(ModelConfig.toy(seed=3))
    path = save_weights(model, str(tmp_path / "weights.mvdt"))
    loaded = load_weights(path)
    assert loaded.config == model.config
    for (name, a), (_, b) in zip(model.named_parameters(), loaded.named_parameters()):
        assert torch.equal(a, b), name
    frame = np.random.default_rng(1).integers(0, 256, size=(128, 128, 3), dtype=np.uint8)
    out_a = forward_dense(frame, model, ReferenceState.for_model(model.config))
    out_b = forward_dense(frame, loaded, ReferenceState.for_model(loaded.config))
    assert torch.equal(out_a, out_b)


def test_detections_round_trip_sorted_by_index(tmp_path):
    per_frame = [[Detection(BBox(0, 0, 16, 16), 0.5, 1)], []]
    path = write_detections(per_frame, str(tmp_path / "d.json"), indices=[1, 0])
    assert read_detections(path) == [[], [Detection(BBox(0, 0, 16, 16), 0.5, 1)]]


def test_read_detections_rejects_garbage(tmp_path):
    path = tmp_path / "d.json"
    path.write_text(json.dumps([{"frame": 0}]))
    with pytest.raises(FormatError):
        read_detections(str(path))


def test_feature_maps_in_tensor_container(tmp_path):
    features = {"masked": torch.zeros(4, 8, dtype=torch.float64), "oracle": torch.ones(4, 8, dtype=torch.float64)}
    path = save_features(features, str(tmp_path / "f.mvdt"), ModelConfig.toy())
    fields, loaded = read_tensors(path)
    assert config_from_fields(fields, path) == ModelConfig.toy()
    assert torch.equal(loaded["oracle"].double(), features["oracle"])
    assert read_tensors(save_features(features, str(tmp_path / "g.mvdt")))[0] == {}
