"""Exception hierarchy.

Each exception carries the CLI exit code of the stage it belongs to, so the
command line front end can map failures without inspecting messages.
"""


class MorphfitError(Exception):
    exit_code = 1

    def __init__(self, message, stage=None):
        self.stage = stage
        if stage:
            message = f"[{stage}] {message}"
        super().__init__(message)


class MeshIOError(MorphfitError):
    """File missing, unreadable or malformed."""

    exit_code = 2


class FormatError(MeshIOError):
    """Structured text file with a bad or unsupported header / schema."""


class ValidationError(MorphfitError):
    """Inputs parse but violate a precondition (mesh, landmarks, partition)."""

    exit_code = 3


class PartitionError(ValidationError):
    pass


class DegenerateLandmarksError(ValidationError):
    pass


class SolverError(MorphfitError):
    exit_code = 4


class SingularSystemError(SolverError):
    pass


class DivergenceError(SolverError):
    def __init__(self, message, iteration=None, stage=None):
        self.iteration = iteration
        super().__init__(message, stage=stage)
