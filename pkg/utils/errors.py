"""
Exception hierarchy for the simulator
Every failure raised by library code derives from CogShareError
"""


class CogShareError(Exception):
    """Base class for all simulator errors"""


class DimensionMismatchError(CogShareError):
    def __init__(self, detail: str = ""):
        super().__init__(f"dimension mismatch{': ' + detail if detail else ''}")


class NoSamplesError(CogShareError):
    def __init__(self):
        super().__init__("no samples")


class NotSymmetricError(CogShareError):
    def __init__(self, asymmetry: float):
        super().__init__(f"not symmetric (asymmetry {asymmetry:.3e})")


class IllConditionedError(CogShareError):
    def __init__(self, min_eig: float):
        super().__init__(f"ill-conditioned source (smallest eigenvalue {min_eig:.3e})")


class NonFiniteError(CogShareError):
    """Raised when an input array carries NaN or inf"""


class DivergenceError(CogShareError):
    """Raised when a loss or gradient stops being finite"""


class LabelRangeError(CogShareError):
    def __init__(self, num_classes: int):
        super().__init__(f"label out of range [0, {num_classes})")


class NeedPairError(CogShareError):
    def __init__(self):
        super().__init__("need a pair")


class MissingCovarianceError(CogShareError):
    def __init__(self, class_id: int):
        super().__init__(f"missing class covariance for class {class_id}")


class DataFormatError(CogShareError):
    """Raised for malformed IDX files"""


class PartitionError(CogShareError):
    """Raised when a partition request cannot be satisfied"""


class ConfigError(CogShareError):
    """Raised for unparsable or out-of-range configuration"""


class CheckpointError(CogShareError):
    """Raised for unreadable, corrupted or incompatible checkpoints"""
