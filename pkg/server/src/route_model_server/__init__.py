"""Reference server for the forward-model wire protocol."""

from .server import handle_line, load_backend, main, serve_stdio, serve_tcp

__all__ = ["handle_line", "load_backend", "main", "serve_stdio", "serve_tcp"]
