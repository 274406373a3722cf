"""Streaming intent detection for human-human support-call transcripts."""

__version__ = "0.1.0"
