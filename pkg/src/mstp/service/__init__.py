"""Wire protocol, HTTP client, and the oracle-backed mock server."""
from .client import ProtocolClient, RetryPolicy
from .server import MockBacking, ServerHandle, create_app, serve_mock
from .wire import PROTOCOL_VERSION

__all__ = [
    "PROTOCOL_VERSION",
    "MockBacking",
    "ProtocolClient",
    "RetryPolicy",
    "ServerHandle",
    "create_app",
    "serve_mock",
]
