import pytest

from apt_extract.config import DEFAULT_MODEL, DEFAULT_TEMPLATE, ExtractorConfig
from apt_extract.errors import InvalidConfig


def test_defaults():
    cfg = ExtractorConfig(data_dir="/data/pets", out_path="pets.aptb")
    assert cfg.template == DEFAULT_TEMPLATE
    assert cfg.model == DEFAULT_MODEL
    assert cfg.split_ratios == (0.5, 0.2, 0.3)
    assert cfg.views == 1


def test_template_must_have_class_slot():
    with pytest.raises(InvalidConfig, match="placeholder"):
        ExtractorConfig(data_dir="d", out_path="o", template="a photo of a pet.")


def test_prompt_rendering_fills_class_and_domain():
    cfg = ExtractorConfig(data_dir="/data/pets", out_path="o")
    assert cfg.prompt_for("beagle") == "a photo of a beagle, a type of pets."
    cfg = ExtractorConfig(data_dir="/data/pets", out_path="o", domain="dog")
    assert cfg.prompt_for("beagle") == "a photo of a beagle, a type of dog."


def test_template_without_domain_slot_is_fine():
    cfg = ExtractorConfig(data_dir="d", out_path="o", template="a photo of a {}.")
    assert cfg.prompt_for("cat") == "a photo of a cat."


@pytest.mark.parametrize("ratios", [
    (0.5, 0.5, 0.5),
    (0.7, 0.4, -0.1),
    (1.0, 0.0),
])
def test_bad_ratios_rejected(ratios):
    with pytest.raises(InvalidConfig):
        ExtractorConfig(data_dir="d", out_path="o", split_ratios=ratios)


def test_views_must_be_positive():
    with pytest.raises(InvalidConfig, match="views"):
        ExtractorConfig(data_dir="d", out_path="o", views=0)
