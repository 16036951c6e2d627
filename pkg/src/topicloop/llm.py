"""Chat-endpoint client: prompt rendering, transport with retries, parsing.

The wire protocol is the common chat-completions shape: POST a JSON body
{model, messages, temperature, max_tokens} and read
choices[0].message.content from the JSON response. A rule-table mock
transport is a first-class citizen so every pipeline that touches an LLM can
run deterministically with no network and no model.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources
from itertools import combinations
from typing import Callable, Mapping, Sequence

import requests

from .errors import DataError, ResponseParseError, TransportError, ValidationError

ENV_BASE_URL = "TOPICLOOP_LLM_BASE_URL"
ENV_API_KEY = "TOPICLOOP_LLM_API_KEY"
ENV_MODEL = "TOPICLOOP_LLM_MODEL"

TEMPLATE_TEXTS = {
    "topic_inference": (
        "Generate {count} set of topics from the given corpus vocabulary. "
        "The criteria are: 1) Cluster the terms into {count} topics; "
        "2) Ensure each topic is semantically coherent; "
        "3) Avoid repetition of words across topics and minimize random noise. "
        "Examples: {examples}. Topics: {topics}"
    ),
    "coherence_evaluation": (
        "Evaluate whether the following set of words forms a semantically "
        "coherent cluster. The criteria are: 1) All words should relate to the "
        "same overarching theme or concept; 2) Their meanings and contexts "
        "should align closely; 3) There should be no outliers. If the cluster "
        'meets these criteria, respond with "Yes." If not, respond with "No". '
        "Examples: {examples}. cluster to Evaluate: {cluster}"
    ),
    "post_correction": (
        "Assess whether the following Chinese words meet the specified "
        "criteria. The criteria are: 1) All words should belong to the same "
        "category or concept; 2) The meanings, contexts, and usage should be "
        "very similar; 3) No exceptions should exist. If the words meet the "
        'criteria, respond with "Yes." If the words do not meet the criteria, '
        'respond with "No" and list the words that do not fit using Python '
        "list syntax. Examples: {examples}. Words to Evaluate: {words}"
    ),
}

_PLACEHOLDER = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER.findall(self.text))


def get_template(name: str) -> PromptTemplate:
    if name not in TEMPLATE_TEXTS:
        raise ValidationError(f"unknown prompt template {name!r}")
    return PromptTemplate(name=name, text=TEMPLATE_TEXTS[name])


def default_examples(name: str) -> str:
    """Few-shot examples for a template, loaded from the editable fixtures."""
    filename = f"fewshot_{name}.txt"
    try:
        return resources.files("topicloop").joinpath("data", filename).read_text("utf-8").strip()
    except FileNotFoundError as exc:
        raise DataError(f"missing few-shot fixture {filename}") from exc


def render_prompt(template: PromptTemplate, bindings: Mapping[str, object]) -> str:
    """Substitute every placeholder; nothing else in the template changes."""
    rendered = template.text
    for name in sorted(template.placeholders):
        if name not in bindings:
            raise ValidationError(
                f"placeholder {{{name}}} is unbound for template {template.name!r}"
            )
        value = str(bindings[name])
        if not value:
            raise ValidationError(
                f"placeholder {{{name}}} must not be empty for template {template.name!r}"
            )
        rendered = rendered.replace("{" + name + "}", value)
    return rendered


@dataclass(frozen=True)
class Verdict:
    """A yes/no judgement, with the words flagged when the answer is no."""

    kind: str  # "yes" | "no"
    rejected_words: tuple[str, ...] = ()
    raw: str = ""

    def __post_init__(self):
        if self.kind not in ("yes", "no"):
            raise ValidationError(f"verdict kind must be 'yes' or 'no', got {self.kind!r}")
        if self.kind == "yes" and self.rejected_words:
            raise ValidationError("a yes verdict cannot carry rejected words")


# Full-width and curly punctuation commonly produced by Chinese-language
# models, normalized before verdict parsing.
_PUNCT_MAP = str.maketrans({
    "［": "[", "］": "]", "【": "[", "】": "]",
    "“": '"', "”": '"', "‘": "'", "’": "'",
    "「": '"', "」": '"', "『": '"', "』": '"',
    "，": ",", "：": ":", "。": ".", "；": ";",
})

# ASCII word boundaries so a verdict right next to CJK text still matches.
_YES_NO = re.compile(r"\b(yes|no)\b", re.IGNORECASE | re.ASCII)
_BRACKETED = re.compile(r"\[(.*?)\]", re.DOTALL)
_QUOTED = re.compile(r'"([^"]*)"|\'([^\']*)\'')


def parse_verdict(raw: str) -> Verdict:
    """Find the first yes/no in a response; on no, pull the flagged word list.

    Tolerates surrounding prose and full-width punctuation. The word list is
    the first bracketed group after the verdict that contains quoted strings;
    brackets holding anything else (citations, asides) are skipped. A "no"
    without such a list yields an empty rejected-word tuple.
    """
    text = raw.translate(_PUNCT_MAP)
    match = _YES_NO.search(text)
    if match is None:
        raise ResponseParseError(f"no yes/no verdict found in response {raw[:80]!r}")
    if match.group(1).lower() == "yes":
        return Verdict(kind="yes", raw=raw)
    for bracketed in _BRACKETED.finditer(text, match.end()):
        rejected = [
            quoted.group(1) if quoted.group(1) is not None else quoted.group(2)
            for quoted in _QUOTED.finditer(bracketed.group(1))
        ]
        rejected = [word for word in rejected if word]
        if rejected:
            return Verdict(kind="no", rejected_words=tuple(rejected), raw=raw)
    return Verdict(kind="no", raw=raw)


@dataclass
class ChatExchange:
    """One completed request/response round trip."""

    prompt: str
    model: str
    temperature: float
    max_tokens: int
    response: str
    latency: float
    attempts: int


class MockTransport:
    """Deterministic endpoint stand-in driven by a substring rule table.

    Rules are (trigger, response) pairs checked in order against the outgoing
    prompt; the first trigger contained in the prompt wins. With no matching
    rule the optional default answers; failing that, the call raises a
    payload transport error so misconfigured tests fail loudly.
    """

    def __init__(self, rules: Sequence[tuple[str, str]] = (), default: str | None = None):
        self.rules = [(str(t), str(r)) for t, r in rules]
        self.default = default
        self.call_count = 0
        self._lock = threading.Lock()

    @classmethod
    def from_json(cls, path: str) -> "MockTransport":
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read mock rules {path}: {exc}") from exc
        rules = [(r["contains"], r["response"]) for r in obj.get("rules", [])]
        return cls(rules=rules, default=obj.get("default"))

    def send(self, payload: dict) -> str:
        with self._lock:
            self.call_count += 1
        prompt = payload["messages"][-1]["content"]
        for trigger, response in self.rules:
            if trigger in prompt:
                return response
        if self.default is not None:
            return self.default
        raise TransportError("no mock rule matched the prompt", kind="payload")


class HttpTransport:
    """POSTs chat-completion requests to a configurable base URL."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        path: str = "/v1/chat/completions",
        timeout: float = 60.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.path = path
        self.timeout = timeout

    def send(self, payload: dict) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(
                self.base_url + self.path, json=payload, headers=headers, timeout=self.timeout
            )
        except requests.Timeout as exc:
            raise TransportError(f"endpoint timed out: {exc}", kind="timeout") from exc
        except requests.ConnectionError as exc:
            raise TransportError(f"cannot reach endpoint: {exc}", kind="connection") from exc
        if not response.ok:
            raise TransportError(
                f"endpoint returned HTTP {response.status_code}", kind="status"
            )
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}", kind="payload") from exc
        if not isinstance(content, str):
            raise TransportError("completion content is not a string", kind="payload")
        return content


@dataclass
class TopicDistillation:
    """Parsed topic groups plus the defect accounting for the response."""

    groups: list[list[str]]
    hallucinated: list[str]  # parsed words absent from the input
    missing: list[str]       # input words absent from the parsed output
    duplicate_count: int     # extra occurrences of words across/within groups


_GROUP_LINE = re.compile(r"^\s*(?:topic\s*)?#?\d+\s*[:.)\-]\s*(.+)$", re.IGNORECASE)


def _parse_topic_groups(text: str) -> list[list[str]]:
    groups: list[list[str]] = []
    for line in text.splitlines():
        match = _GROUP_LINE.match(line)
        if match is None:
            continue
        tokens = [
            tok.strip().strip("\"'[]")
            for tok in re.split(r"[,，、;]+", match.group(1))
        ]
        tokens = [t for t in tokens if t]
        if tokens:
            groups.append(tokens)
    return groups


class LlmClient:
    """Retry-wrapped chat client with a bounded concurrent-request gate.

    Decoding defaults lean deterministic: temperature 0 and a bounded token
    budget. ``max_retries`` is the total attempt budget per call; transient
    transport failures back off exponentially between attempts.
    """

    def __init__(
        self,
        transport,
        model: str = "local-chat",
        temperature: float = 0.0,
        max_tokens: int = 1024,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        max_concurrency: int = 4,
        max_words_per_prompt: int = 20,
        examples: Mapping[str, str] | None = None,
    ):
        if max_retries < 1:
            raise ValidationError(f"max_retries must be >= 1, got {max_retries}")
        self.transport = transport
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.max_words_per_prompt = max_words_per_prompt
        self._examples = dict(examples or {})
        self._gate = threading.BoundedSemaphore(max_concurrency)

    def _examples_for(self, template_name: str) -> str:
        return self._examples.get(template_name) or default_examples(template_name)

    def complete(self, prompt: str) -> ChatExchange:
        """Send one prompt, retrying transport failures with backoff."""
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        started = time.monotonic()
        last: TransportError | None = None
        for attempt in range(1, self.max_retries + 1):
            try:
                with self._gate:
                    text = self.transport.send(payload)
            except TransportError as exc:
                last = exc
                if attempt < self.max_retries and self.backoff_base > 0:
                    time.sleep(self.backoff_base * 2 ** (attempt - 1))
                continue
            return ChatExchange(
                prompt=prompt,
                model=self.model,
                temperature=self.temperature,
                max_tokens=self.max_tokens,
                response=text,
                latency=time.monotonic() - started,
                attempts=attempt,
            )
        assert last is not None
        raise TransportError(
            f"gave up after {self.max_retries} attempts: {last}", kind=last.kind
        )

    def evaluate_cluster_coherence(self, cluster_words: Sequence[str]) -> float:
        """Score a word cluster 1.0 (coherent) or 0.0 via the yes/no judge.

        A singleton cluster is coherent by convention and never reaches the
        endpoint.
        """
        words = list(cluster_words)
        if not words:
            raise ValidationError("cannot judge an empty word cluster")
        if len(words) > self.max_words_per_prompt:
            raise ValidationError(
                f"{len(words)} words exceed the per-prompt cap {self.max_words_per_prompt}"
            )
        if len(words) == 1:
            return 1.0
        prompt = render_prompt(
            get_template("coherence_evaluation"),
            {
                "examples": self._examples_for("coherence_evaluation"),
                "cluster": json.dumps(words, ensure_ascii=False),
            },
        )
        verdict = parse_verdict(self.complete(prompt).response)
        return 1.0 if verdict.kind == "yes" else 0.0

    def correct_words(self, topic_words: Sequence[str]) -> Verdict:
        """Ask which of a topic's words do not belong; yes means none."""
        words = list(topic_words)
        if not words:
            raise ValidationError("cannot correct an empty word list")
        if len(words) > self.max_words_per_prompt:
            raise ValidationError(
                f"{len(words)} words exceed the per-prompt cap {self.max_words_per_prompt}"
            )
        prompt = render_prompt(
            get_template("post_correction"),
            {
                "examples": self._examples_for("post_correction"),
                "words": json.dumps(words, ensure_ascii=False),
            },
        )
        return parse_verdict(self.complete(prompt).response)

    def distill_topics(self, vocabulary_words: Sequence[str], count: int) -> TopicDistillation:
        """Prompt for a direct partition of words into topics and audit it.

        Hallucinated, duplicated, and missing words are measured and
        reported, never silently repaired. Fewer parseable groups than
        requested raises a parse error carrying the partial result.
        """
        words = list(vocabulary_words)
        if count < 1:
            raise ValidationError(f"count must be >= 1, got {count}")
        if not words:
            raise ValidationError("vocabulary word list must not be empty")
        prompt = render_prompt(
            get_template("topic_inference"),
            {
                "count": count,
                "examples": self._examples_for("topic_inference"),
                "topics": json.dumps(words, ensure_ascii=False),
            },
        )
        response = self.complete(prompt).response
        groups = _parse_topic_groups(response)
        if len(groups) < count:
            partial = _audit_distillation(groups, words)
            raise ResponseParseError(
                f"expected {count} topic groups, parsed {len(groups)}", partial=partial
            )
        return _audit_distillation(groups[:count], words)


def _audit_distillation(groups: list[list[str]], input_words: list[str]) -> TopicDistillation:
    parsed = [w for group in groups for w in group]
    distinct: list[str] = []
    seen: set[str] = set()
    for w in parsed:
        if w not in seen:
            seen.add(w)
            distinct.append(w)
    input_set = set(input_words)
    hallucinated = [w for w in distinct if w not in input_set]
    missing = [w for w in input_words if w not in seen]
    return TopicDistillation(
        groups=groups,
        hallucinated=hallucinated,
        missing=missing,
        duplicate_count=len(parsed) - len(distinct),
    )


def pairwise_similarity_score(
    words: Sequence[str], similarity: Callable[[str, str], float]
) -> float:
    """Average a graded word-pair similarity into one cluster score.

    The cluster-level yes/no judge is the default coherence scorer; this
    adapter serves judges that grade pairs instead, averaging
    ``similarity(w_i, w_j)`` over unordered pairs so the result plugs into
    the same [0, 1] threshold interface. A single word scores 1.0 by the
    usual convention.
    """
    words = list(words)
    if not words:
        raise ValidationError("cannot score an empty word cluster")
    if len(words) == 1:
        return 1.0
    values = [float(similarity(a, b)) for a, b in combinations(words, 2)]
    return float(sum(values) / len(values))


def client_from_env(
    mock_rules_path: str | None = None,
    base_url: str | None = None,
    api_key: str | None = None,
    model: str | None = None,
    **kwargs,
) -> LlmClient:
    """Build a client from a mock rules file or endpoint env vars."""
    if mock_rules_path is not None:
        return LlmClient(MockTransport.from_json(mock_rules_path), **kwargs)
    base_url = base_url or os.environ.get(ENV_BASE_URL)
    if not base_url:
        raise ValidationError(
            f"no LLM endpoint configured: set {ENV_BASE_URL} or pass a mock rules file"
        )
    api_key = api_key or os.environ.get(ENV_API_KEY)
    model = model or os.environ.get(ENV_MODEL) or "local-chat"
    return LlmClient(HttpTransport(base_url, api_key=api_key), model=model, **kwargs)
