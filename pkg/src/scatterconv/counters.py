from __future__ import annotations

from dataclasses import dataclass


@dataclass
class MultCounter:
    """Instrumented operation counts for one or more kernel calls.

    ``peak_aux_bytes`` is a high-water mark of auxiliary buffers (products,
    lowered matrices, tile accumulators) that a kernel reports as it
    allocates them; it is not allocator introspection.
    """

    scalar_multiplications: int = 0
    scalar_additions: int = 0
    peak_aux_bytes: int = 0
    synchronizations: int = 0

    def add(self, mults: int = 0, adds: int = 0) -> None:
        self.scalar_multiplications += int(mults)
        self.scalar_additions += int(adds)

    def note_aux(self, nbytes: int) -> None:
        if nbytes > self.peak_aux_bytes:
            self.peak_aux_bytes = int(nbytes)

    def merge(self, other: "MultCounter") -> None:
        self.scalar_multiplications += other.scalar_multiplications
        self.scalar_additions += other.scalar_additions
        self.synchronizations += other.synchronizations
        self.note_aux(other.peak_aux_bytes)

    def reset(self) -> None:
        self.scalar_multiplications = 0
        self.scalar_additions = 0
        self.peak_aux_bytes = 0
        self.synchronizations = 0
