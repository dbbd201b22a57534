"""Exception types shared across the package."""


class PitCollideError(Exception):
    pass


class WheelLiftOff(PitCollideError):
    """A computed vertical tire load is not positive."""


class FrictionCircleViolation(PitCollideError):
    pass


class SingularInertia(PitCollideError):
    pass


class IntegrationDiverged(PitCollideError):
    def __init__(self, message, index=None, time=None):
        super().__init__(message)
        self.index = index
        self.time = time


class NotClosing(PitCollideError):
    """Vehicles are separating at the contact point; no impact occurs."""


class SingularSystem(PitCollideError):
    pass


class EmptyCurve(PitCollideError):
    pass


class GridMismatch(PitCollideError):
    pass


class DegenerateCovariance(PitCollideError):
    pass


class DimMismatch(PitCollideError):
    pass


class UntrainedWeights(PitCollideError):
    pass


class Diverged(PitCollideError):
    def __init__(self, message, seed=None, epoch=None):
        super().__init__(message)
        self.seed = seed
        self.epoch = epoch


class DivergedRollout(PitCollideError):
    pass


class EmptyTrainingSet(PitCollideError):
    pass


class NotPSD(PitCollideError):
    pass


class DegenerateFeatures(PitCollideError):
    pass


class ConfigError(PitCollideError):
    pass


class CheckpointError(PitCollideError):
    pass
