"""Estimator backed by a remote language-model endpoint.

Two protocols are supported. ``wire`` posts a compact JSON request
``{persona, template_id, slots}`` and expects ``{text}`` back, which suits a thin
adapter service. ``chat`` renders the template locally and talks to a
chat-completion style endpoint (``{model, messages, temperature}`` in,
``choices[0].message.content`` out).

The endpoint URL and API key are read from environment variables.
"""

from __future__ import annotations

import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import httpx

from ..env import Observation, WorldSpec
from .base import EstimatorError, EstimatorHub
from .personas import PersonaSpec, clamp_reward
from .templates import SLOTS, render

log = logging.getLogger(__name__)

URL_ENV = "REWARD_LLM_URL"
KEY_ENV = "REWARD_LLM_API_KEY"
LOW_TEMPERATURE_PROVIDERS = ("gpt-4-turbo", "gpt4-turbo")

_SCORE_RE = re.compile(r"score\s*:\s*([+-]?\d+)", re.IGNORECASE)
_RELEVANT_RE = re.compile(r"relevant objects\s*:\s*(.*)", re.IGNORECASE)


class ParseError(EstimatorError):
    pass


@dataclass(frozen=True)
class WireRequest:
    persona: int
    template_id: str
    slots: dict

    def to_json(self) -> dict:
        return {"persona": self.persona, "template_id": self.template_id,
                "slots": {k: self.slots.get(k, "") for k in SLOTS}}

    @classmethod
    def from_json(cls, d: dict) -> "WireRequest":
        return cls(int(d["persona"]), d["template_id"], dict(d["slots"]))


@dataclass(frozen=True)
class WireResponse:
    text: str

    def to_json(self) -> dict:
        return {"text": self.text}

    @classmethod
    def from_json(cls, d: dict) -> "WireResponse":
        if not isinstance(d.get("text"), str):
            raise ParseError("response has no text field")
        return cls(d["text"])


def parse_score(text: str) -> int:
    m = _SCORE_RE.search(text)
    if m is None:
        raise ParseError(f"no score in response: {text[:80]!r}")
    return clamp_reward(int(m.group(1)))


def parse_relevant(text: str) -> frozenset[str]:
    m = _RELEVANT_RE.search(text)
    if m is None:
        raise ParseError(f"no relevant objects in response: {text[:80]!r}")
    names = [n.strip().strip(".").lower() for n in m.group(1).split(",")]
    return frozenset(n.replace(" ", "_") for n in names if n and n not in ("none", "nothing"))


def parse_verdict(text: str) -> bool:
    t = text.lower()
    if "impossible" in t:
        return False
    if "possible" in t:
        return True
    raise ParseError(f"no verdict in response: {text[:80]!r}")


def default_temperature(model: str) -> float:
    return 0.5 if model.lower() in LOW_TEMPERATURE_PROVIDERS else 0.7


@dataclass
class RemoteConfig:
    protocol: str = "wire"  # wire | chat
    model: str = "default"
    temperature: float | None = None
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5
    max_inflight: int = 4

    def __post_init__(self):
        if self.protocol not in ("wire", "chat"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.retries < 0 or self.max_inflight < 1:
            raise ValueError("retries must be >= 0 and max_inflight >= 1")

    @property
    def effective_temperature(self) -> float:
        return default_temperature(self.model) if self.temperature is None else self.temperature


class RemoteEstimator(EstimatorHub):
    def __init__(self, world: WorldSpec, personas: Sequence[PersonaSpec], cfg: RemoteConfig | None = None,
                 url: str | None = None, api_key: str | None = None, client: httpx.Client | None = None):
        super().__init__(personas, world.num_actions)
        self.world = world
        self.cfg = cfg or RemoteConfig()
        self.url = url or os.environ.get(URL_ENV)
        if not self.url:
            raise EstimatorError(f"remote estimator needs an endpoint; set {URL_ENV}")
        self.api_key = api_key if api_key is not None else os.environ.get(KEY_ENV, "")
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        self.client = client or httpx.Client(timeout=self.cfg.timeout, headers=headers)
        self._action_list = ", ".join(a.text for a in world.actions)
        self._pool = ThreadPoolExecutor(max_workers=self.cfg.max_inflight)

    def close(self) -> None:
        self._pool.shutdown(wait=True)
        self.client.close()

    # -- transport -----------------------------------------------------------

    def _slots(self, instruction: str, obs: Observation | None = None, action: int | None = None,
               history: Sequence[int] | None = None) -> dict:
        names = lambda xs: ", ".join(x.replace("_", " ") for x in xs) or "nothing"
        hist = history if history is not None else (obs.history if obs else ())
        return {
            "instruction": instruction,
            "action_list": self._action_list,
            "history": ", ".join(self.world.actions[a].text for a in hist) or "none",
            "visible": names(obs.visible) if obs else "",
            "grabbed": names(obs.held) if obs else "",
            "action": self.world.actions[action].text if action is not None else "",
        }

    def _post(self, req: WireRequest) -> str:
        if self.cfg.protocol == "wire":
            r = self.client.post(self.url, json=req.to_json())
            r.raise_for_status()
            return WireResponse.from_json(r.json()).text
        body = {
            "model": self.cfg.model,
            "temperature": self.cfg.effective_temperature,
            "messages": [{"role": "user", "content": render(req.template_id, req.slots)}],
        }
        r = self.client.post(self.url, json=body)
        r.raise_for_status()
        try:
            return r.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise ParseError(f"malformed chat response: {e}") from e

    def _ask(self, req: WireRequest, parse):
        last: Exception | None = None
        for attempt in range(self.cfg.retries + 1):
            try:
                return parse(self._post(req))
            except (ParseError, httpx.HTTPError, ValueError) as e:
                last = e
                log.warning("remote estimator attempt %d failed: %s", attempt + 1, e)
                if attempt < self.cfg.retries and self.cfg.backoff > 0:
                    time.sleep(self.cfg.backoff * (2 ** attempt))
        raise EstimatorError(f"remote estimator gave up after {self.cfg.retries + 1} attempts: {last}")

    # -- hooks -----------------------------------------------------------------

    def _estimate_one(self, persona: PersonaSpec, obs: Observation, action: int, instruction: str) -> int:
        req = WireRequest(persona.id, persona.kind, self._slots(instruction, obs, action))
        return self._ask(req, parse_score)

    def _estimate_all(self, persona, obs, instruction):
        futures = [self._pool.submit(self._estimate_one, persona, obs, a, instruction)
                   for a in range(self.num_actions)]
        return tuple(f.result() for f in futures)

    def estimate(self, persona, obs, action, instruction):
        if not 0 <= action < self.num_actions:
            raise ValueError(f"action id {action} out of range")
        self._count("estimate")
        return self._estimate_one(persona, obs, action, instruction)

    def _answer_qa(self, persona, query, obs, instruction):
        req = WireRequest(persona.id, "qa", self._slots(instruction, obs))
        return self._ask(req, parse_relevant)

    def _verify_plan(self, persona, instruction, actions):
        req = WireRequest(persona.id, "verify", self._slots(instruction, None, None, history=actions))
        return self._ask(req, parse_verdict)
