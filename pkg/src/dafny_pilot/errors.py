"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class DafnyPilotError(Exception):
    """Base class for all engine errors."""


# --- source text / patches ---

class StaleBase(DafnyPilotError):
    """Patch base hash does not match the text it is applied to."""

    def __init__(self, expected: str, actual: str):
        super().__init__(f"patch base hash {expected} does not match text hash {actual}")
        self.expected = expected
        self.actual = actual


class OverlappingEdits(DafnyPilotError):
    """Two edits in one patch overlap."""


class SpanOutOfRange(DafnyPilotError):
    """A span refers to positions outside the text."""


# --- verifier ---

class VerifierNotFound(DafnyPilotError):
    """The configured Dafny executable does not exist."""


class ReplayMiss(DafnyPilotError):
    """No recorded fixture/cassette exists for the requested key."""

    def __init__(self, key: str, where: str = ""):
        loc = f" in {where}" if where else ""
        super().__init__(f"no recording for key {key}{loc}")
        self.key = key


# --- prompts ---

class MissingContextField(DafnyPilotError):
    """A template placeholder has no value in the render context."""


class CannotFit(DafnyPilotError):
    """Prompt cannot be reduced below the token budget."""


# --- llm client ---

class AuthMissing(DafnyPilotError):
    """API key environment variable is not set."""


class NetworkError(DafnyPilotError):
    """Transport failure that survived all retries."""


class ProviderError(DafnyPilotError):
    """Non-2xx response from the model endpoint."""

    def __init__(self, status: int, body: str):
        super().__init__(f"provider returned status {status}: {body[:200]}")
        self.status = status
        self.body = body


# --- suggestions ---

class NoCodeFound(DafnyPilotError):
    """Model response contained no usable code."""


class UnplaceableSnippet(DafnyPilotError):
    """A snippet could not be resolved to a placement anchor."""


class NoSuchLemma(DafnyPilotError):
    """Named lemma declaration does not exist in the file."""


# --- loop ---

class BudgetExhausted(DafnyPilotError):
    """Prompt could not be fitted into the token budget."""


class PrecheckFailed(DafnyPilotError):
    """Generated code was rejected by the parse/resolve pass."""

    def __init__(self, message: str, diagnostics=()):
        super().__init__(message)
        self.diagnostics = tuple(diagnostics)


# --- corpus ---

class ManifestError(DafnyPilotError):
    """Corpus manifest is malformed."""


class DuplicateId(ManifestError):
    """Two corpus cases share an id."""


class MissingFile(ManifestError):
    """A path referenced by the manifest does not exist."""
