import numpy as np
import pytest
from PIL import Image


def make_color_dataset(root, per_class=4, size=48, classes=("blue", "red")):
    """Class-per-folder toy images: near-solid colors with mild texture."""
    base = {"red": (210, 40, 30), "blue": (30, 60, 200), "green": (40, 190, 60)}
    rng = np.random.default_rng(0)
    for name in classes:
        folder = root / name
        folder.mkdir(parents=True)
        for i in range(per_class):
            pix = np.tile(np.array(base[name], dtype=np.float64), (size, size, 1))
            pix += rng.normal(0.0, 12.0, size=(size, size, 3))
            img = Image.fromarray(np.clip(pix, 0, 255).astype(np.uint8))
            img.save(folder / f"img_{i:02d}.png")
    return root


@pytest.fixture
def toy_dataset(tmp_path):
    return make_color_dataset(tmp_path / "toys")
