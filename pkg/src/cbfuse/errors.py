"""Exception hierarchy shared by all cbfuse modules."""


class CbfuseError(Exception):
    """Base class for every error raised by cbfuse."""


class SingularMap(CbfuseError):
    pass


class GeometryMismatch(CbfuseError):
    pass


class UnsupportedFormat(CbfuseError):
    pass


class CorruptHeader(CbfuseError):
    pass


class IoFailure(CbfuseError):
    pass


class InfeasiblePlacement(CbfuseError):
    pass


class EmptyLiver(CbfuseError):
    pass


class BadGeometry(CbfuseError):
    pass


class ShapeMismatch(CbfuseError, ValueError):
    pass


class DivergedLoss(CbfuseError):
    pass


class EmptyInput(CbfuseError):
    pass


class BadRatios(CbfuseError):
    pass


class ColumnMismatch(CbfuseError):
    pass
