"""
Patch schemas: the static type a pipeline stage produces or consumes.
"""

from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, field_validator

from .metadata import MetaTag
from .patch import CHANNELS, Patch

ANY_DIM = -1


class PatchSchema(BaseModel):
    """
    Shape, label domain and required keys of a patch stream.

    ``data_shape`` None accepts any shape; a dimension of -1 accepts any
    size along that axis. ``label_domain`` None means labels are open.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    data_shape: Optional[List[int]] = None
    label_domain: Optional[List[str]] = None
    required_keys: Dict[str, MetaTag] = {}

    @field_validator("data_shape")
    @classmethod
    def _check_dims(cls, value: Optional[List[int]]) -> Optional[List[int]]:
        if value is not None and any(d < ANY_DIM for d in value):
            raise ValueError("dimensions must be non-negative or -1")
        return value

    @field_validator("label_domain")
    @classmethod
    def _check_domain(cls, value: Optional[List[str]]) -> Optional[List[str]]:
        if value is None:
            return None
        if not value:
            raise ValueError("a finite label domain must not be empty")
        return sorted(set(value))

    @classmethod
    def pixels(cls, label_domain: Optional[List[str]] = None, **keys: MetaTag) -> PatchSchema:
        required = {"frameno": MetaTag.INTEGER, "bbox": MetaTag.BBOX}
        required.update(keys)
        if label_domain is not None:
            required["label"] = MetaTag.STRING
        return cls(data_shape=[ANY_DIM, ANY_DIM, CHANNELS], label_domain=label_domain, required_keys=required)

    def derive(
        self,
        data_shape: Optional[List[int]] = None,
        keep_shape: bool = False,
        **keys: MetaTag,
    ) -> PatchSchema:
        """Schema of a stage that keeps these keys and adds ``keys``."""
        required = dict(self.required_keys)
        required.update(keys)
        return PatchSchema(
            data_shape=self.data_shape if keep_shape else data_shape,
            label_domain=self.label_domain,
            required_keys=required,
        )

    @property
    def is_feature(self) -> bool:
        return self.data_shape is not None and len(self.data_shape) == 1

    @property
    def is_pixels(self) -> bool:
        return self.data_shape is not None and len(self.data_shape) == 3 and self.data_shape[2] == CHANNELS

    def shape_accepts(self, shape: List[int]) -> bool:
        if self.data_shape is None:
            return True
        if len(shape) != len(self.data_shape):
            return False
        return all(want == ANY_DIM or want == got for want, got in zip(self.data_shape, shape))

    def admits_label(self, label: str) -> bool:
        return self.label_domain is None or label in self.label_domain


def check_schema(patch: Patch, schema: PatchSchema) -> bool:
    """True iff ``patch`` conforms to ``schema``; never raises."""
    if not schema.shape_accepts(list(patch.shape)):
        return False
    if schema.label_domain is not None:
        label = patch.metadata.get("label")
        if label is None or label.tag is not MetaTag.STRING or label.value not in schema.label_domain:
            return False
    for key, tag in schema.required_keys.items():
        value = patch.metadata.get(key)
        if value is None or value.tag is not tag:
            return False
    return True
