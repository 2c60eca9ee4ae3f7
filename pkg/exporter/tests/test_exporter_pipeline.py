"""End-to-end export runs, verified by loading the output with the engine.

The exporter never imports conceptgate; these tests do, on purpose, to
prove the files it writes are exactly what the engine consumes.
"""

import numpy as np
import pytest

from cfeb_export.backbone import HashBackbone
from cfeb_export.errors import ExportError, ImageReadError, JobError
from cfeb_export.export import export
from cfeb_export.job import ExportJob, ImageItem

from conceptgate.embeddings import load_dataset, read_header
from conceptgate.evaluator import infer
from conceptgate.hierarchy import load_manifest
from conceptgate.trainer import TrainConfig, train


def _job(tmp_path, paths, labels=None, patches=4, **over):
    labels = labels if labels is not None else list(range(len(paths)))
    fields = dict(
        images=[ImageItem(p, lab) for p, lab in zip(paths, labels)],
        patches=patches,
        high=["round thing", "angular thing"],
        low=["circle", "dot", "square", "spike"],
        membership=[[0, 1], [2, 3]],
        out_data=tmp_path / "out" / "data.cfeb",
        out_manifest=tmp_path / "out" / "manifest.json",
        backbone="hash-512",
    )
    fields.update(over)
    return ExportJob(**fields)


def test_header_echoes_the_job(make_png, tmp_path):
    paths = [make_png("a.png", stamp=1), make_png("b.png", stamp=2)]
    result = export(_job(tmp_path, paths))
    header = read_header(result.data_path)
    assert (header.n_examples, header.n_patches, header.embed_dim) == (2, 4, 512)
    assert (header.n_classes, header.n_high, header.n_low) == (2, 2, 4)
    assert not header.has_example_gt and not header.has_class_gt
    assert result.n_exported == 2 and result.skipped == []


def test_every_written_row_is_unit_norm_within_1e5(make_png, tmp_path):
    paths = [make_png("a.png", stamp=1), make_png("b.png", stamp=2)]
    result = export(_job(tmp_path, paths, backbone="hash-64"))
    raw = result.data_path.read_bytes()
    header = read_header(result.data_path)
    n, p, k = header.n_examples, header.n_patches, header.embed_dim
    offset = 60 + 4 * n  # 60-byte header + u32 labels
    count = n * k + n * p * k + header.n_high * k + header.n_low * k
    rows = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    norms = np.linalg.norm(rows.reshape(-1, k).astype(np.float64), axis=1)
    assert np.max(np.abs(norms - 1.0)) <= 1e-5


def test_engine_loads_export_and_labels_survive(make_png, tmp_path):
    paths = [make_png(f"{i}.png", stamp=i) for i in range(3)]
    job = _job(tmp_path, paths, labels=[2, 0, 2], backbone="hash-32")
    result = export(job)
    dataset, concepts = load_dataset(result.data_path)
    assert dataset.n_examples == 3 and dataset.n_patches == 4
    assert dataset.embed_dim == 32 and dataset.n_classes == 3
    assert list(dataset.labels) == [2, 0, 2]
    assert concepts.n_high == 2 and concepts.n_low == 4
    hierarchy = load_manifest(result.manifest_path)
    assert hierarchy.layout == "general"
    assert hierarchy.high_names == job.high
    assert np.array_equal(hierarchy.membership,
                          np.array([[1, 0], [1, 0], [0, 1], [0, 1]]))


def test_shared_membership_survives_manifest(make_png, tmp_path):
    paths = [make_png("a.png", stamp=1)]
    job = _job(tmp_path, paths, labels=[0],
               membership=[[0, 1, 2], [2, 3]])  # attribute 2 shared
    export(job)
    hierarchy = load_manifest(job.out_manifest)
    assert hierarchy.layout == "shared"
    assert hierarchy.membership[2].tolist() == [1, 1]


def test_reruns_are_value_identical(make_png, tmp_path):
    paths = [make_png("a.png", stamp=3), make_png("b.png", stamp=4)]
    job = _job(tmp_path, paths, backbone="hash-64")
    export(job)
    first = job.out_data.read_bytes(), job.out_manifest.read_bytes()
    export(job)
    second = job.out_data.read_bytes(), job.out_manifest.read_bytes()
    assert first == second


def test_ground_truth_blocks_round_trip(make_png, tmp_path):
    paths = [make_png(f"{i}.png", stamp=i) for i in range(3)]
    gt = tmp_path / "gt.csv"
    gt.write_text("0,0,1\n2,3,1\n", encoding="utf-8")
    cls = tmp_path / "cls.csv"
    cls.write_text("class_id,attribute_id,value\n1,2,1\n", encoding="utf-8")
    job = _job(tmp_path, paths, labels=[0, 1, 1], backbone="hash-32",
               gt_example_csv=gt, gt_class_csv=cls)
    result = export(job)
    header = read_header(result.data_path)
    assert header.has_example_gt and header.has_class_gt
    dataset, _ = load_dataset(result.data_path)
    want_example = np.zeros((3, 4), dtype=np.uint8)
    want_example[0, 0] = want_example[2, 3] = 1
    want_class = np.zeros((2, 4), dtype=np.uint8)
    want_class[1, 2] = 1
    assert np.array_equal(dataset.gt_example, want_example)
    assert np.array_equal(dataset.gt_class, want_class)


def test_skip_with_warning_drops_rows_consistently(make_png, tmp_path):
    good = [make_png("a.png", stamp=5), make_png("c.png", stamp=6)]
    paths = [good[0], tmp_path / "missing.png", good[1]]
    gt = tmp_path / "gt.csv"
    gt.write_text("0,1,1\n1,0,1\n2,3,1\n", encoding="utf-8")  # ids pre-skip
    warnings = []
    job = _job(tmp_path, paths, labels=[0, 1, 1], backbone="hash-32",
               gt_example_csv=gt)
    result = export(job, warn=warnings.append)
    assert result.skipped == [1]
    assert result.n_exported == 2
    assert len(warnings) == 1 and "skipping image 1" in warnings[0]
    dataset, _ = load_dataset(result.data_path)
    assert list(dataset.labels) == [0, 1]
    # row for the skipped image is gone; the others keep their indicators
    want = np.zeros((2, 4), dtype=np.uint8)
    want[0, 1] = want[1, 3] = 1
    assert np.array_equal(dataset.gt_example, want)


def test_strict_mode_fails_on_unreadable_image(make_png, tmp_path):
    paths = [make_png("a.png", stamp=7), tmp_path / "missing.png"]
    job = _job(tmp_path, paths, strict=True)
    with pytest.raises(ImageReadError, match="missing.png"):
        export(job)


def test_all_images_unreadable_is_an_error(tmp_path):
    job = _job(tmp_path, [tmp_path / "x.png"], labels=[0])
    with pytest.raises(ExportError, match="nothing to export"):
        export(job, warn=lambda _m: None)


def test_non_square_patch_count_rejected(make_png, tmp_path):
    job = _job(tmp_path, [make_png("a.png")], labels=[0], patches=6)
    with pytest.raises(JobError, match="perfect square"):
        export(job)


def test_zero_embedding_from_backbone_is_rejected(make_png, tmp_path):
    class ZeroBackbone(HashBackbone):
        def encode_images(self, images):
            return np.zeros((len(images), self.embed_dim))

    job = _job(tmp_path, [make_png("a.png")], labels=[0])
    with pytest.raises(ExportError, match="zero image embedding"):
        export(job, backbone=ZeroBackbone(16))


def test_batched_encoding_matches_single_batch(make_png, tmp_path):
    paths = [make_png(f"{i}.png", stamp=10 + i) for i in range(5)]
    job_a = _job(tmp_path, paths, labels=[0] * 5, backbone="hash-16",
                 batch_size=2)
    export(job_a)
    blob_a = job_a.out_data.read_bytes()
    job_b = _job(tmp_path, paths, labels=[0] * 5, backbone="hash-16",
                 batch_size=64)
    export(job_b)
    assert blob_a == job_b.out_data.read_bytes()


def test_engine_can_train_on_exporter_output(make_png, tmp_path):
    paths = [make_png(f"{i}.png", stamp=20 + i) for i in range(6)]
    job = _job(tmp_path, paths, labels=[0, 1, 0, 1, 0, 1], backbone="hash-16")
    result = export(job)
    dataset, concepts = load_dataset(result.data_path)
    hierarchy = load_manifest(result.manifest_path)
    config = TrainConfig(epochs=2, batch_size=3, seed=0, patches=4)
    params, history = train(dataset, concepts, hierarchy, config)
    assert len(history.epochs) == 2
    outcome = infer(dataset, concepts, params, hierarchy, tau=0.05)
    assert outcome.predictions_high.shape == (6,)
