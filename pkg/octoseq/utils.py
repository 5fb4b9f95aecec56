from enum import Enum

import numpy as np
import torch


class StrEnum(str, Enum):
    """
    StrEnum subclasses that create variants using `auto()` will have values equal to their
    lower-cased names, which is also how they are spelled on the command line.
    """

    @staticmethod
    def _generate_next_value_(name: str, start: int, count: int, last_values: list[str]) -> str:
        return name.lower()

    def __str__(self) -> str:
        return str(self.value)


def derive_seed(*parts: int) -> int:
    """Combine integers into one reproducible 63-bit seed."""
    sequence = np.random.SeedSequence([abs(int(part)) for part in parts])
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def torch_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator
