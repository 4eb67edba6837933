from __future__ import annotations

import math
import os
from dataclasses import dataclass

from .errors import InvalidConfig

DEFAULT_TEMPLATE = "a photo of a {}, a type of {domain}."
DEFAULT_MODEL = "ViT-B/16"
DEFAULT_SPLIT_RATIOS = (0.5, 0.2, 0.3)


@dataclass(frozen=True)
class ExtractorConfig:
    """Everything one export run needs.

    `data_dir` holds one folder per class, each with that class's images.
    `domain` fills the template's optional {domain} placeholder; when None
    it falls back to the dataset folder's own name.
    """

    data_dir: str
    out_path: str
    template: str = DEFAULT_TEMPLATE
    model: str = DEFAULT_MODEL
    domain: str | None = None
    split_ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS
    split_seed: int = 0
    views: int = 1

    def __post_init__(self):
        if "{}" not in self.template:
            raise InvalidConfig(
                f"template must contain a {{}} placeholder for the class name, "
                f"got {self.template!r}"
            )
        ratios = tuple(self.split_ratios)
        if len(ratios) != 3 or any(r < 0 for r in ratios):
            raise InvalidConfig(f"split ratios must be 3 non-negative numbers, got {ratios}")
        if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
            raise InvalidConfig(f"split ratios must sum to 1, got {ratios} (sum {sum(ratios)})")
        if self.views < 1:
            raise InvalidConfig(f"views must be >= 1, got {self.views}")
        object.__setattr__(self, "split_ratios", ratios)

    @property
    def resolved_domain(self) -> str:
        if self.domain is not None:
            return self.domain
        return os.path.basename(os.path.normpath(self.data_dir))

    def prompt_for(self, class_name: str) -> str:
        # plain replacement, not str.format: class names may contain braces
        text = self.template.replace("{}", class_name)
        return text.replace("{domain}", self.resolved_domain)
