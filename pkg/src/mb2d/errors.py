"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
TrainingDivergence -> 4.  Programming-contract violations (bad shapes,
invalid arguments) raise plain ValueError.
"""


class ConfigError(Exception):
    """Invalid or inconsistent configuration."""


class DataError(Exception):
    """Missing or malformed input data (scenes, datasets, checkpoints)."""


class TrainingDivergence(Exception):
    """Training hit a non-finite loss."""

    def __init__(self, step: int, batch_ids, loss_value):
        self.step = step
        self.batch_ids = list(batch_ids)
        self.loss_value = loss_value
        super().__init__(
            f"non-finite loss {loss_value!r} at step {step} (batch sample ids {self.batch_ids})"
        )
