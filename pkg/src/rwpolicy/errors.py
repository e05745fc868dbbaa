"""Exception hierarchy shared by the toolkit."""


class RWPolicyError(Exception):
    """Base class for all toolkit errors."""


class ContractError(RWPolicyError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class CorpusError(RWPolicyError):
    """A parallel corpus or vocabulary file is unusable."""


class ParseError(CorpusError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class ProtocolError(RWPolicyError):
    """A model adapter sent a message that violates the wire protocol."""


class TransportError(RWPolicyError):
    """A model adapter connection failed."""


class ConfigError(RWPolicyError):
    """Invalid experiment configuration or missing artifact."""


class StageError(RWPolicyError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


class TrainingDiverged(RWPolicyError):
    """Raised when the loss becomes non-finite; carries the last finite parameters."""

    def __init__(self, epoch, checkpoint):
        self.epoch = epoch
        self.checkpoint = checkpoint
        super().__init__(f"non-finite loss in epoch {epoch}")
