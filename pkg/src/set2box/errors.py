"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: config problems exit 2,
training divergence exits 3, artifact corruption exits 4.
"""


class ConfigError(ValueError):
    """Invalid configuration, flags, or input data layout."""


class CorpusFormatError(ConfigError):
    """A corpus or split file failed to parse."""


class TrainingDiverged(RuntimeError):
    """Loss or gradients became non-finite during optimization."""


class ArtifactError(RuntimeError):
    """A serialized model artifact is corrupt or has the wrong format."""


class GraphError(RuntimeError):
    """Misuse of the autodiff tape (non-scalar loss, cross-tape ops)."""
