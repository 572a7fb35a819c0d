from enum import Enum


class ClassLabel(str, Enum):
    BENIGN = "benign"
    MALICIOUS = "malicious"

    @classmethod
    def parse(cls, value: "str | ClassLabel") -> "ClassLabel":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        if text in ("1", "m", "mal"):
            return cls.MALICIOUS
        if text in ("0", "b", "ben"):
            return cls.BENIGN
        return cls(text)
