import hashlib

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

UINT64_MAX = 2**64 - 1


def derive_stream_id(*keys: object) -> int:
    """Stable 64-bit substream id from an ordered key tuple."""
    payload = "\x1f".join(str(key) for key in keys).encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


class RngStream(BaseModel):
    """Deterministic random stream addressed by (master_seed, stream_id)."""

    model_config = ConfigDict(frozen=True)

    master_seed: int = Field(..., ge=0, le=UINT64_MAX, description="Experiment master seed")
    stream_id: int = Field(0, ge=0, le=UINT64_MAX, description="Substream identifier")

    @classmethod
    def for_trial(cls, master_seed: int, experiment_id: str, trial_index: int) -> "RngStream":
        """Substream of one trial, independent of the order trials are scheduled in."""
        return cls(master_seed=master_seed, stream_id=derive_stream_id(experiment_id, trial_index))

    def child(self, *keys: object) -> "RngStream":
        """Derived substream; the same keys always give the same child."""
        return RngStream(
            master_seed=self.master_seed,
            stream_id=derive_stream_id(self.stream_id, *keys),
        )

    def generator(self) -> np.random.Generator:
        """Fresh counter-based generator positioned at the start of this stream."""
        seed_sequence = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seed_sequence))
