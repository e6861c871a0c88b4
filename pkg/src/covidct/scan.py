"""Diagnosis labels and the CT scan container."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import InvalidArgument
from .imaging import Image


class Label(enum.Enum):
    COVID = "covid"
    NON_COVID = "non-covid"

    @classmethod
    def parse(cls, text: str) -> "Label":
        key = text.strip().lower().replace("_", "-")
        if key in ("covid", "covid-19", "positive", "1"):
            return cls.COVID
        if key in ("non-covid", "noncovid", "negative", "0"):
            return cls.NON_COVID
        raise InvalidArgument(f"unknown label {text!r}")

    @property
    def target(self) -> float:
        """Classifier target: 1.0 means non-COVID."""
        return 1.0 if self is Label.NON_COVID else 0.0

    def __str__(self):
        return self.value


@dataclass
class CtScan:
    scan_id: str
    slices: list[Image] = field(default_factory=list)
    label: Label | None = None

    def __post_init__(self):
        self.slices = list(self.slices)
        if self.slices:
            shape = self.slices[0].shape
            for img in self.slices[1:]:
                if img.shape != shape:
                    raise InvalidArgument(
                        f"scan {self.scan_id}: slices differ in size ({shape} vs {img.shape})")

    def __len__(self):
        return len(self.slices)
