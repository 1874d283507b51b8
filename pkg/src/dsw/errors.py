"""Exception types raised across the package."""


class DswError(ValueError):
    """Base class for all errors raised by this package."""


class NonPositiveDisparity(DswError):
    pass


class InvalidConfig(DswError):
    pass


class OutOfRange(DswError):
    pass


class InvalidTheta(DswError):
    pass


class ObjectLargerThanImage(DswError):
    pass


class LutRangeMismatch(DswError):
    pass


class EmptyImage(DswError):
    pass


class MalformedCalib(DswError):
    pass


class NonPositiveBaseline(DswError):
    pass


class MalformedLabel(DswError):
    pass


class UnsupportedFormat(DswError):
    pass


class DimensionMismatch(DswError):
    pass


class PlantOutOfBounds(DswError):
    pass


class DegenerateBox(DswError):
    pass
