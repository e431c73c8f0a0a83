"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class CollapseError(RuntimeError):
    """Raised when a training or search run produces a non-finite loss.

    Carries enough context to tell which optimizer settings blew up.
    """

    def __init__(self, message, *, epoch=None, weight_lr=None, alpha_lr=None):
        super().__init__(message)
        self.epoch = epoch
        self.weight_lr = weight_lr
        self.alpha_lr = alpha_lr

    def __str__(self):
        base = super().__str__()
        parts = []
        if self.epoch is not None:
            parts.append(f"epoch={self.epoch}")
        if self.weight_lr is not None:
            parts.append(f"weight_lr={self.weight_lr}")
        if self.alpha_lr is not None:
            parts.append(f"alpha_lr={self.alpha_lr}")
        return f"{base} ({', '.join(parts)})" if parts else base


class ScenarioRejectionError(RuntimeError):
    """Raised when scenario generation exhausts its rejection budget."""
