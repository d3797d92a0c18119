"""Exception hierarchy shared by all rigbridge modules.

Every error carries an ``exit_code`` so the CLI can map failures onto its
exit-code contract: 2 for validation problems, 3 for numeric failures.
"""


class RigBridgeError(Exception):
    exit_code = 1


class ValidationError(RigBridgeError):
    """Base for input/contract violations (CLI exit code 2)."""

    exit_code = 2


class NumericError(RigBridgeError):
    """Base for numerical failures during computation (CLI exit code 3)."""

    exit_code = 3


# -- asset / io ----------------------------------------------------------

class MalformedAsset(ValidationError):
    pass


class ValidationFailure(ValidationError):
    """An invariant of a rig component was violated; message names it."""


class UnitMissing(ValidationError):
    pass


class IoFailure(RigBridgeError):
    exit_code = 1


class MalformedMotion(ValidationError):
    pass


class JointCountMismatch(ValidationError):
    pass


# -- geometry ------------------------------------------------------------

class EmptyMesh(ValidationError):
    pass


class DegenerateTriangle(NumericError):
    pass


class SizeMismatch(ValidationError):
    pass


class DisconnectedMesh(UserWarning):
    """Warning, not an error: masks are still produced per component."""


# -- skeleton fitting ----------------------------------------------------

class EmptySupport(ValidationError):
    pass


class SingularSystem(NumericError):
    pass


class InsufficientPoints(ValidationError):
    pass


class DegenerateCovariance(NumericError):
    pass


# -- animation -----------------------------------------------------------

class EncodingMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


# -- inversion -----------------------------------------------------------

class EmptySelection(ValidationError):
    pass


class MissingInit(ValidationError):
    pass


class Diverged(NumericError):
    pass


class UnknownTopology(ValidationError):
    pass


# -- synth / config ------------------------------------------------------

class InvalidConfig(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class TooFewFrames(ValidationError):
    pass
