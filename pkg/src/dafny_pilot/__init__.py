"""dafny-pilot: an LLM <-> Dafny verifier feedback loop for lemma inference,
proof inference, and repair, with deterministic record/replay."""

__version__ = "0.1.0"
