"""Exception types shared across the package.

Every error carries the name of the module that raised it so the CLI can
print module-tagged messages and map the error class to an exit status.
"""


class JigsawError(Exception):
    module = "jigsawhsi"

    def __init__(self, message, module=None):
        super().__init__(message)
        if module is not None:
            self.module = module

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class ValidationError(JigsawError, ValueError):
    """Bad argument, bad config value or violated precondition."""


class FormatError(JigsawError, OSError):
    """On-disk data that cannot be decoded (size mismatch, bad header...)."""
