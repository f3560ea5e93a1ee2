"""Wire protocol bridging the engine to external policy/value processes.

Newline-delimited JSON over a local TCP or unix socket, one request in
flight per connection:

    -> {"type": "hello", "env": "csg2d", "sigma_small": 2}
    <- {"type": "ready"}
    -> {"type": "policy", "tokens": [...], "current_png": "<base64>",
        "target_png": "<base64>", "k": N}
    <- {"type": "proposals", "items": [{"pos": int, "replacement": [tok...],
        "score": float}]}
    -> {"type": "value", "a_png": "<base64>", "b_png": "<base64>"}
    <- {"type": "value", "estimate": float}

`pos` is the token index where the edit node's span starts.  An empty
`tokens` list asks the server to propose whole programs from scratch
(search initialization); replacements are then parsed from the start
symbol.  Everything an external process returns is re-validated against
the grammar before the engine will touch it.
"""

from __future__ import annotations

import base64
import json
import socket
import socketserver
import threading
from dataclasses import dataclass, field

from .envs import Environment
from .grammar import Node, ParseError, parse, serialize
from .policies import EditProposal
from .render import load_png, png_bytes

DEFAULT_TIMEOUT = 10.0


class ProtocolError(Exception):
    pass


def encode_image(canvas) -> str:
    return base64.b64encode(png_bytes(canvas)).decode("ascii")


def decode_image(data: str):
    return load_png(base64.b64decode(data))


class PolicyClient:
    """Blocking JSON-lines client; one request in flight per connection."""

    def __init__(self, endpoint: str, env_name: str, sigma_small: int = 2, timeout: float = DEFAULT_TIMEOUT):
        self.endpoint = endpoint
        self.env_name = env_name
        self.sigma_small = sigma_small
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._reader = None

    def _connect(self):
        if self._sock is not None:
            return
        try:
            if self.endpoint.startswith("unix:"):
                sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
                sock.settimeout(self.timeout)
                sock.connect(self.endpoint[len("unix:") :])
            else:
                host, _, port = self.endpoint.rpartition(":")
                sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=self.timeout)
        except (OSError, ValueError) as e:
            raise ProtocolError(f"cannot connect to {self.endpoint!r}: {e}") from e
        self._sock = sock
        self._reader = sock.makefile("r", encoding="utf-8", newline="\n")
        reply = self._roundtrip({"type": "hello", "env": self.env_name, "sigma_small": self.sigma_small})
        if reply.get("type") != "ready":
            raise ProtocolError(f"bad handshake reply: {reply!r}")

    def _roundtrip(self, message: dict) -> dict:
        assert self._sock is not None
        try:
            self._sock.sendall((json.dumps(message) + "\n").encode("utf-8"))
            line = self._reader.readline()
        except OSError as e:
            self.close()
            raise ProtocolError(f"transport failure: {e}") from e
        if not line:
            self.close()
            raise ProtocolError("server closed the connection")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"malformed reply: {e}") from e
        if not isinstance(reply, dict):
            raise ProtocolError("reply is not a JSON object")
        if reply.get("type") == "error":
            raise ProtocolError(f"server error: {reply.get('message', '?')}")
        return reply

    def request_policy(self, tokens, current_png_b64: str, target_png_b64: str, k: int) -> list[dict]:
        self._connect()
        reply = self._roundtrip(
            {
                "type": "policy",
                "tokens": list(tokens),
                "current_png": current_png_b64,
                "target_png": target_png_b64,
                "k": k,
            }
        )
        if reply.get("type") != "proposals" or not isinstance(reply.get("items"), list):
            raise ProtocolError(f"bad policy reply: {reply!r}")
        return reply["items"]

    def request_value(self, a_png_b64: str, b_png_b64: str) -> float:
        self._connect()
        reply = self._roundtrip({"type": "value", "a_png": a_png_b64, "b_png": b_png_b64})
        if reply.get("type") != "value" or not isinstance(reply.get("estimate"), (int, float)):
            raise ProtocolError(f"bad value reply: {reply!r}")
        return float(reply["estimate"])

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._reader = None


@dataclass
class BridgeStats:
    queries: int = 0
    failures: int = 0
    rejected: dict[str, int] = field(default_factory=dict)

    def reject(self, reason: str):
        self.rejected[reason] = self.rejected.get(reason, 0) + 1


class ExternalPolicy:
    """Engine-side bridge: queries the endpoint and validates every proposal
    against the grammar before exposing it."""

    def __init__(self, env: Environment, client: PolicyClient, sigma_small: int = 2):
        self.env = env
        self.client = client
        self.sigma_small = sigma_small
        self.stats = BridgeStats()

    def propose(self, tree: Node, current_image, target_image, k: int = 1, render=None):
        self.stats.queries += 1
        tokens = serialize(tree).tokens
        try:
            items = self.client.request_policy(
                tokens, encode_image(current_image), encode_image(target_image), k
            )
        except ProtocolError:
            self.stats.failures += 1
            return []
        return self.validate_items(tree, items)

    def validate_items(self, tree: Node, items: list[dict]) -> list[EditProposal]:
        seq = serialize(tree)
        # pos -> outermost interior node at that span start
        by_pos: dict[int, tuple] = {}
        for path, (start, _end) in seq.node_spans.items():
            if start not in by_pos or len(path) < len(by_pos[start]):
                by_pos[start] = path
        out = []
        for item in items:
            if not isinstance(item, dict):
                self.stats.reject("malformed_item")
                continue
            pos = item.get("pos")
            replacement = item.get("replacement")
            score = item.get("score", 0.0)
            if not isinstance(pos, int) or not isinstance(replacement, list) or not isinstance(score, (int, float)):
                self.stats.reject("malformed_item")
                continue
            path = by_pos.get(pos)
            if path is None:
                self.stats.reject("bad_position")
                continue
            node = self.env.grammar.node_at(tree, path)
            try:
                parsed = parse(self.env.grammar, [str(t) for t in replacement], context=node.context)
            except ParseError:
                self.stats.reject("unparseable_replacement")
                continue
            if parsed.sigma > self.sigma_small:
                self.stats.reject("oversized_replacement")
                continue
            if parsed == node:
                self.stats.reject("identical_replacement")
                continue
            out.append(EditProposal(path, parsed, float(score)))
        return out

    def propose_initial(self, target_image, k: int) -> list[Node]:
        """Whole-program proposals from a blank current image."""
        self.stats.queries += 1
        import numpy as np

        blank = (
            np.zeros((128, 128), np.float32)
            if self.env.channels == 1
            else np.ones((128, 128, 3), np.float32)
        )
        try:
            items = self.client.request_policy([], encode_image(blank), encode_image(target_image), k)
        except ProtocolError:
            self.stats.failures += 1
            return []
        programs = []
        for item in items:
            replacement = item.get("replacement") if isinstance(item, dict) else None
            if not isinstance(replacement, list):
                self.stats.reject("malformed_item")
                continue
            try:
                programs.append(parse(self.env.grammar, [str(t) for t in replacement]))
            except ParseError:
                self.stats.reject("unparseable_replacement")
        return programs


class ExternalValue:
    def __init__(self, env: Environment, client: PolicyClient, target_image):
        self.env = env
        self.client = client
        self.target_png = encode_image(target_image)
        self.stats = BridgeStats()

    def estimate(self, tree: Node, image) -> float:
        self.stats.queries += 1
        try:
            return self.client.request_value(encode_image(image), self.target_png)
        except ProtocolError:
            self.stats.failures += 1
            return float("inf")


# -- server scaffolding (used by the test stub and external implementations) -----------


class PolicyServer:
    """Threaded JSON-lines server; dispatches to a handler object with
    on_hello(msg), on_policy(msg) -> items, on_value(msg) -> float."""

    def __init__(self, handler, host: str = "127.0.0.1", port: int = 0):
        outer = self

        class _Conn(socketserver.StreamRequestHandler):
            def handle(self):
                for raw in self.rfile:
                    try:
                        msg = json.loads(raw.decode("utf-8"))
                        reply = outer._dispatch(msg)
                    except Exception as e:  # noqa: BLE001 - survive bad clients
                        reply = {"type": "error", "message": str(e)}
                    self.wfile.write((json.dumps(reply) + "\n").encode("utf-8"))
                    self.wfile.flush()

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self.handler = handler
        self._server = _Server((host, port), _Conn)
        self.address = f"{self._server.server_address[0]}:{self._server.server_address[1]}"
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def _dispatch(self, msg: dict) -> dict:
        kind = msg.get("type")
        if kind == "hello":
            self.handler.on_hello(msg)
            return {"type": "ready"}
        if kind == "policy":
            return {"type": "proposals", "items": self.handler.on_policy(msg)}
        if kind == "value":
            return {"type": "value", "estimate": self.handler.on_value(msg)}
        return {"type": "error", "message": f"unknown message type {kind!r}"}

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
