import numpy as np
import pytest

# the produced banks are audited through the consumer's own loader, which
# re-checks every format invariant on read
from apt.bank import load_bank

from apt_extract.config import ExtractorConfig
from apt_extract.encoders import ColorStubEncoder, load_encoder
from apt_extract.errors import EmptyDataset, InvalidConfig, ModelLoadFailure
from apt_extract.extract import extract, split_tags

from conftest import make_color_dataset


def stub_config(toy_dataset, tmp_path, **kw):
    kw.setdefault("model", "debug-color-stub")
    return ExtractorConfig(data_dir=str(toy_dataset),
                           out_path=str(tmp_path / "toy.aptb"), **kw)


def test_toy_folder_shapes(toy_dataset, tmp_path):
    # 2 classes x 4 images through the patch-16 geometry at 224px
    path = extract(stub_config(toy_dataset, tmp_path))
    bank = load_bank(path)
    assert bank.num_classes == 2
    assert bank.dim == 512
    assert bank.tokens_per_image == 197
    assert len(bank.images) == 8
    assert bank.class_names == ["blue", "red"]
    assert all(rec.views.shape == (1, 197, 512) for rec in bank.images)


def test_manifest_records_run_parameters(toy_dataset, tmp_path):
    path = extract(stub_config(toy_dataset, tmp_path, split_seed=3))
    bank = load_bank(path)
    assert bank.metadata["model"] == "debug-color-stub"
    assert "{}" in bank.metadata["template"]
    assert bank.metadata["split_ratios"] == "0.5/0.2/0.3"
    assert bank.metadata["split_seed"] == "3"
    assert bank.metadata["skipped"] == "[]"
    assert bank.metadata["domain"] == "toys"


def test_same_config_twice_identical(toy_dataset, tmp_path):
    a = extract(stub_config(toy_dataset, tmp_path))
    first_tags = [rec.split_tag for rec in load_bank(a).images]
    first_bytes = open(a, "rb").read()
    b = extract(ExtractorConfig(data_dir=str(toy_dataset),
                                out_path=str(tmp_path / "again.aptb"),
                                model="debug-color-stub"))
    assert [rec.split_tag for rec in load_bank(b).images] == first_tags
    # with a deterministic encoder the whole file reproduces
    assert open(b, "rb").read() == first_bytes


def test_split_seed_changes_assignment(toy_dataset, tmp_path):
    tags = []
    for seed in (0, 1):
        path = extract(ExtractorConfig(data_dir=str(toy_dataset),
                                       out_path=str(tmp_path / f"s{seed}.aptb"),
                                       model="debug-color-stub",
                                       split_seed=seed))
        tags.append([rec.split_tag for rec in load_bank(path).images])
    assert tags[0] != tags[1]


def test_split_tags_follow_floor_rule():
    rng = np.random.default_rng(0)
    tags = split_tags(10, (0.5, 0.2, 0.3), rng)
    assert sorted(tags).count("train_pool") == 5
    assert sorted(tags).count("val") == 2
    assert sorted(tags).count("test") == 3


def test_views_export_extra_augmentations(toy_dataset, tmp_path):
    path = extract(stub_config(toy_dataset, tmp_path, views=3))
    bank = load_bank(path)
    assert all(rec.views.shape == (3, 197, 512) for rec in bank.images)
    # augmented views are distinct crops, not copies of the canonical one
    rec = bank.images[0]
    assert not np.array_equal(rec.views[0], rec.views[1])


def test_unreadable_image_skipped_and_logged(toy_dataset, tmp_path):
    (toy_dataset / "red" / "broken.png").write_bytes(b"this is not an image")
    path = extract(stub_config(toy_dataset, tmp_path))
    bank = load_bank(path)
    assert len(bank.images) == 8  # the broken file is not a record
    assert "broken.png" in bank.metadata["skipped"]


def test_empty_dataset_rejected(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(EmptyDataset):
        extract(ExtractorConfig(data_dir=str(tmp_path / "empty"),
                                out_path=str(tmp_path / "x.aptb"),
                                model="debug-color-stub"))


def test_dataset_with_only_unreadable_files_rejected(tmp_path):
    folder = tmp_path / "data" / "red"
    folder.mkdir(parents=True)
    (folder / "junk.png").write_bytes(b"junk")
    with pytest.raises(EmptyDataset):
        extract(ExtractorConfig(data_dir=str(tmp_path / "data"),
                                out_path=str(tmp_path / "x.aptb"),
                                model="debug-color-stub"))


def test_bad_template_fails_before_model_load(tmp_path):
    # config validation must precede any encoder work: with a template
    # error, an unobtainable model is never touched
    with pytest.raises(InvalidConfig):
        ExtractorConfig(data_dir=str(tmp_path), out_path="o",
                        template="no class slot",
                        model="definitely/not-a-real-model")


def test_text_rows_align_with_own_class_images(toy_dataset, tmp_path):
    make_color_dataset(toy_dataset.parent / "more", classes=("green",))
    (toy_dataset.parent / "more" / "green").rename(toy_dataset / "green")
    path = extract(stub_config(toy_dataset, tmp_path))
    bank = load_bank(path)

    def mean_cos(c_text, c_img):
        w = bank.text_embeddings[c_text].astype(np.float64)
        feats = [r.feature.astype(np.float64) for r in bank.images if r.label == c_img]
        return np.mean([
            f @ w / (np.linalg.norm(f) * np.linalg.norm(w)) for f in feats
        ])

    k = bank.num_classes
    for c in range(k):
        own = mean_cos(c, c)
        others = [mean_cos(c, o) for o in range(k) if o != c]
        assert own > max(others)


def test_unknown_model_raises_model_load_failure(tmp_path):
    with pytest.raises(ModelLoadFailure):
        load_encoder("definitely/not-a-real-model")


def test_real_clip_if_available(toy_dataset, tmp_path):
    # runs only where the ViT-B/16 weights are actually obtainable
    try:
        encoder = load_encoder("ViT-B/16")
    except ModelLoadFailure as exc:
        pytest.skip(f"CLIP weights unavailable here: {exc}")
    assert encoder.dim == 512
    assert encoder.tokens_per_image == 197
    path = extract(ExtractorConfig(data_dir=str(toy_dataset),
                                   out_path=str(tmp_path / "clip.aptb")),
                   encoder=encoder)
    bank = load_bank(path)
    assert bank.dim == 512 and bank.tokens_per_image == 197
