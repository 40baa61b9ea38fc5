"""The seven talent types and the label-vector slot order."""
from __future__ import annotations

from enum import Enum


class TalentType(str, Enum):
    ACADEMIC = "Academic"
    SPORT = "Sport"
    ART = "Art"
    LEADERSHIP = "Leadership"
    SERVICE = "Service"
    TECHNOLOGY = "Technology"
    OTHER = "Other"

    @property
    def slot(self) -> int:
        return TALENT_TYPES.index(self)

    @classmethod
    def parse(cls, value) -> "TalentType":
        if isinstance(value, TalentType):
            return value
        if isinstance(value, int):
            return TALENT_TYPES[value]
        text = str(value).strip().lower()
        for t in TALENT_TYPES:
            if t.value.lower() == text or t.name.lower() == text:
                return t
        raise ValueError(f"unknown talent type {value!r}")


TALENT_TYPES = list(TalentType)
N_TYPES = len(TALENT_TYPES)
TYPE_NAMES = [t.value for t in TALENT_TYPES]
