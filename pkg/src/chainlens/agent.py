"""Conversation loop bridging a language-model backend to the generated tools.

The backend is a pluggable capability: given the chat history and the tool
schemas it either answers with text or requests one tool call. Tool calls
execute against the same route table the HTTP API serves, so agents and the
UI observe identical state, and every call and result is recorded verbatim
in the history for auditability. A deterministic scripted backend ships for
tests and offline use; an HTTP chat-completions adapter covers real models.
"""

from __future__ import annotations

import json
import re
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Mapping, Protocol, Sequence

from .errors import InvalidConfig
from .pipeline import Pipeline
from .server import RouteTable, dispatch_request, generate_tool_schemas

FALLBACK_TEXT = "I could not find a scripted answer for that; try asking about the pipeline."
BUDGET_TEXT = "I ran out of tool calls before reaching an answer."

MAX_SESSIONS = 100


@dataclass
class ChatTurn:
    role: str  # "user" | "agent" | "tool"
    content: str = ""
    tool_call: dict | None = None  # {"name": ..., "arguments": {...}}
    tool_result: dict | None = None  # {"status": int, "body": envelope-or-error}

    def to_payload(self) -> dict:
        return {
            "role": self.role,
            "content": self.content,
            "tool_call": self.tool_call,
            "tool_result": self.tool_result,
        }


@dataclass
class BackendReply:
    text: str | None = None
    tool_call: dict | None = None


class AgentBackend(Protocol):
    def complete(self, history: Sequence[ChatTurn], tools: Sequence[dict]) -> BackendReply: ...


# --- scripted backend (deterministic test double) ----------------------------------


def _normalize_steps(respond: Any) -> list[Any]:
    if isinstance(respond, str):
        return [{"text": respond}]
    if isinstance(respond, Mapping) or callable(respond):
        return [respond]
    return list(respond)


class ScriptedBackend:
    """First script entry whose pattern matches the latest user turn fires;
    its steps are consumed one per completion (tool calls, then the final
    text). Steps may be callables taking the history, for answers derived
    from tool results."""

    def __init__(self, script: Sequence[Mapping[str, Any]]):
        if not script:
            raise InvalidConfig("scripted backend needs at least one entry")
        self.entries = [
            (re.compile(entry["match"], re.IGNORECASE), _normalize_steps(entry["respond"]))
            for entry in script
        ]

    def complete(self, history: Sequence[ChatTurn], tools: Sequence[dict]) -> BackendReply:
        last_user_index = max(
            (i for i, turn in enumerate(history) if turn.role == "user"), default=None
        )
        if last_user_index is None:
            return BackendReply(text=FALLBACK_TEXT)
        message = history[last_user_index].content
        steps = None
        for pattern, entry_steps in self.entries:
            if pattern.search(message):
                steps = entry_steps
                break
        if steps is None:
            return BackendReply(text=FALLBACK_TEXT)
        progress = sum(1 for turn in history[last_user_index:] if turn.role == "tool")
        step = steps[progress] if progress < len(steps) else steps[-1]
        if callable(step):
            step = step(history)
        if isinstance(step, str):
            return BackendReply(text=step)
        if "tool" in step:
            return BackendReply(tool_call={"name": step["tool"], "arguments": dict(step.get("args") or {})})
        return BackendReply(text=step.get("text", FALLBACK_TEXT))


def scripted_backend(script: Sequence[Mapping[str, Any]]) -> ScriptedBackend:
    return ScriptedBackend(script)


# --- tool execution ------------------------------------------------------------------


def execute_tool(pipeline: Pipeline, table: RouteTable, name: str, arguments: Mapping[str, Any]) -> dict:
    """Run one tool call through the same dispatch path HTTP requests use."""
    route = table.by_tool(name)
    if route is None:
        return {"status": 404, "body": {"error": {"type": "UnknownTool", "message": f"no tool named '{name}'"}}}
    if route.verb == "GET":
        query = {}
        for key, value in arguments.items():
            if isinstance(value, bool):
                query[key] = "true" if value else "false"
            elif isinstance(value, (dict, list)):
                query[key] = json.dumps(value)
            else:
                query[key] = str(value)
        status, body = dispatch_request(pipeline, table, route.verb, route.path, None, query)
    else:
        status, body = dispatch_request(pipeline, table, route.verb, route.path, dict(arguments), None)
    return {"status": status, "body": body}


def converse(
    pipeline: Pipeline,
    table: RouteTable,
    backend: AgentBackend,
    history: Sequence[ChatTurn],
    message: str,
    max_tool_calls: int = 8,
    tools: Sequence[dict] | None = None,
) -> list[ChatTurn]:
    """One conversation turn: the backend may issue up to ``max_tool_calls``
    tool calls, each executed and appended verbatim, before answering."""
    turns = list(history) + [ChatTurn("user", message)]
    tool_schemas = list(tools) if tools is not None else generate_tool_schemas(table)
    calls = 0
    while True:
        reply = backend.complete(turns, tool_schemas)
        if reply.tool_call is None:
            turns.append(ChatTurn("agent", reply.text or ""))
            return turns
        if calls >= max_tool_calls:
            turns.append(ChatTurn("agent", BUDGET_TEXT))
            return turns
        calls += 1
        name = str(reply.tool_call.get("name"))
        arguments = dict(reply.tool_call.get("arguments") or {})
        turns.append(ChatTurn("agent", "", tool_call={"name": name, "arguments": arguments}))
        result = execute_tool(pipeline, table, name, arguments)
        turns.append(ChatTurn("tool", "", tool_result=result))


# --- sessions ----------------------------------------------------------------------------


class ChatSessions:
    """In-memory per-session histories, LRU-evicted at MAX_SESSIONS."""

    def __init__(self, capacity: int = MAX_SESSIONS):
        self.capacity = capacity
        self._histories: OrderedDict[str, list[ChatTurn]] = OrderedDict()
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def lock_for(self, session_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def get(self, session_id: str) -> list[ChatTurn]:
        with self._guard:
            history = self._histories.get(session_id, [])
            if session_id in self._histories:
                self._histories.move_to_end(session_id)
            return list(history)

    def put(self, session_id: str, history: list[ChatTurn]) -> None:
        with self._guard:
            self._histories[session_id] = list(history)
            self._histories.move_to_end(session_id)
            while len(self._histories) > self.capacity:
                evicted, _ = self._histories.popitem(last=False)
                self._locks.pop(evicted, None)


def converse_session(
    sessions: ChatSessions,
    backend: AgentBackend,
    pipeline: Pipeline,
    table: RouteTable,
    session_id: str,
    message: str,
    max_tool_calls: int = 8,
) -> list[ChatTurn]:
    with sessions.lock_for(session_id):  # one in-flight turn per session
        history = sessions.get(session_id)
        turns = converse(pipeline, table, backend, history, message, max_tool_calls)
        sessions.put(session_id, turns)
        return turns


# --- HTTP chat-completions adapter ------------------------------------------------------------


class HttpChatBackend:
    """Adapter speaking the common chat-completions wire format with function
    tools. Not exercised by the test suite (needs a live endpoint)."""

    def __init__(self, base_url: str, model: str, api_key: str | None = None, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    def _messages(self, history: Sequence[ChatTurn]) -> list[dict]:
        messages: list[dict] = [
            {
                "role": "system",
                "content": "You answer questions about a composable AI pipeline. "
                "Use the provided tools to inspect and control it; ground every claim in tool results.",
            }
        ]
        call_counter = 0
        pending_call_id = None
        for turn in history:
            if turn.role == "user":
                messages.append({"role": "user", "content": turn.content})
            elif turn.role == "agent" and turn.tool_call is not None:
                call_counter += 1
                pending_call_id = f"call_{call_counter}"
                messages.append(
                    {
                        "role": "assistant",
                        "content": None,
                        "tool_calls": [
                            {
                                "id": pending_call_id,
                                "type": "function",
                                "function": {
                                    "name": turn.tool_call["name"],
                                    "arguments": json.dumps(turn.tool_call.get("arguments") or {}),
                                },
                            }
                        ],
                    }
                )
            elif turn.role == "agent":
                messages.append({"role": "assistant", "content": turn.content})
            elif turn.role == "tool":
                messages.append(
                    {
                        "role": "tool",
                        "tool_call_id": pending_call_id or "call_0",
                        "content": json.dumps(turn.tool_result or {}),
                    }
                )
        return messages

    def complete(self, history: Sequence[ChatTurn], tools: Sequence[dict]) -> BackendReply:
        import httpx

        payload = {
            "model": self.model,
            "messages": self._messages(history),
            "tools": [
                {
                    "type": "function",
                    "function": {
                        "name": tool["name"],
                        "description": tool["description"],
                        "parameters": tool["parameters"],
                    },
                }
                for tool in tools
            ],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        response = httpx.post(
            f"{self.base_url}/chat/completions", json=payload, headers=headers, timeout=self.timeout
        )
        response.raise_for_status()
        message = response.json()["choices"][0]["message"]
        tool_calls = message.get("tool_calls") or []
        if tool_calls:
            function = tool_calls[0]["function"]
            try:
                arguments = json.loads(function.get("arguments") or "{}")
            except json.JSONDecodeError:
                arguments = {}
            return BackendReply(tool_call={"name": function["name"], "arguments": arguments})
        return BackendReply(text=message.get("content") or "")
