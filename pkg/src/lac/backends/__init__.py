from lac.backends.base import (
    TOP_K,
    Backend,
    BackendError,
    GenerationRequest,
    GenerationResult,
    ProtocolError,
    TokenQuery,
    TransientBackendError,
    UnsupportedCapability,
    token_meter,
)
from lac.backends.scripted import Rule, ScriptedBackend

__all__ = [
    "TOP_K",
    "Backend",
    "BackendError",
    "GenerationRequest",
    "GenerationResult",
    "ProtocolError",
    "Rule",
    "ScriptedBackend",
    "TokenQuery",
    "TransientBackendError",
    "UnsupportedCapability",
    "token_meter",
]
