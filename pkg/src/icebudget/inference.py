"""Prompt construction, answering backends, and the paraphrase pass.

Two backends: a deterministic similarity-weighted vote for self-contained
runs, and an OpenAI-style completions endpoint for real LLM answering.
Labels are decoded from generated text by case-insensitive verbalizer match.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import requests

from .corpus import LabelSpace
from .errors import BackendError, DecodeError, ValidationError

MOCK_VOTE_EPSILON = 1e-6

PARAPHRASE_FEW_SHOT = (
    'Please paraphrase the original sentence. Original sentence: "a stirring , '
    'funny and finally transporting re-imagining of beauty and the beast and '
    '1930s horror films" Paraphrased sentence: A captivating, humorous, and '
    "ultimately uplifting reinterpretation of Beauty and the Beast combined "
    "with 1930s horror films. \n"
    "Please paraphrase the original sentence. Original sentence: \"jonathan "
    "parker 's bartleby should have been the be-all-end-all of the "
    'modern-office anomie films" Paraphrased sentence: Jonathan Parker\'s '
    '"Bartleby" had the potential to be the definitive film capturing the '
    "sense of alienation in modern office settings. \n"
    'Please paraphrase the original sentence. Original sentence: "a fan film '
    'that for the uninitiated plays better on video with the sound turned '
    'down" Paraphrased sentence: A fan film that, for those not familiar with '
    "the source material, is more enjoyable when watched with the sound "
    "turned off. \n"
    'Please paraphrase the original sentence. Original sentence: "apparently '
    'reassembled from the cutting-room floor of any given daytime soap" '
    "Paraphrased sentence: It appears to be pieced together from the outtakes "
    "of any given daytime soap opera. \n"
    'Please paraphrase the original sentence. Original sentence: "{text}" '
    "Paraphrased sentence:"
)


@dataclass(frozen=True)
class PromptTemplate:
    instruction: str = ""
    example_format: str = "{text}\n{label}"
    query_format: str = "{text}\n"
    joiner: str = "\n\n"

    def __post_init__(self):
        for name, fmt, placeholders in (
            ("example_format", self.example_format, ("{text}", "{label}")),
            ("query_format", self.query_format, ("{text}",)),
        ):
            for ph in placeholders:
                if fmt.count(ph) != 1:
                    raise ValidationError(
                        f"{name} must contain {ph} exactly once")


@dataclass(frozen=True)
class MockVoteBackend:
    """Distance-weighted vote over the prompt's in-context examples."""

    name: str = "mock-vote"


@dataclass(frozen=True)
class HttpBackend:
    endpoint: str
    model: str
    auth_env: str = "ICEBUDGET_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    max_tokens: int = 8

    def __post_init__(self):
        if not (self.endpoint.startswith("http://")
                or self.endpoint.startswith("https://")):
            raise ValidationError(f"malformed endpoint URL: {self.endpoint}")


def build_prompt(ices, query_text: str, template: PromptTemplate,
                 labels: LabelSpace) -> str:
    """Concatenate rendered (text, label) pairs in the given order, then the
    rendered query. Callers decide the ICE ordering."""
    parts = []
    if template.instruction:
        parts.append(template.instruction)
    for text, label in ices:
        if not 0 <= label < labels.count:
            raise ValidationError(f"ICE label {label} outside label space")
        parts.append(template.example_format
                     .replace("{text}", text)
                     .replace("{label}", labels.verbalizers[label]))
    parts.append(template.query_format.replace("{text}", query_text))
    return template.joiner.join(parts)


def answer_mock(ices_with_distances, query_text: str = "") -> int:
    """Similarity-weighted vote: each ICE votes for its label with weight
    1/(eps + distance). Ties go to the lowest label index; no ICEs -> 0."""
    if not ices_with_distances:
        return 0
    totals: dict[int, float] = {}
    for label, dist in ices_with_distances:
        if dist < 0:
            raise ValidationError("distance must be nonnegative")
        totals[label] = totals.get(label, 0.0) + 1.0 / (MOCK_VOTE_EPSILON + dist)
    best = max(totals.items(), key=lambda item: (item[1], -item[0]))
    return best[0]


def decode_label(completion: str, labels: LabelSpace) -> int:
    """First verbalizer occurrence (case-insensitive) in the generated text;
    position ties go to the lower label index."""
    lowered = completion.lower()
    best_pos, best_label = None, None
    for idx, verbalizer in enumerate(labels.verbalizers):
        pos = lowered.find(verbalizer.lower())
        if pos >= 0 and (best_pos is None or pos < best_pos):
            best_pos, best_label = pos, idx
    if best_label is None:
        raise DecodeError("completion matched no verbalizer",
                          raw_completion=completion)
    return best_label


def _post_completion(prompt: str, backend: HttpBackend) -> str:
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(backend.auth_env, "")
    if token:
        headers["Authorization"] = f"Bearer {token}"
    body = {"model": backend.model, "prompt": prompt,
            "max_tokens": backend.max_tokens, "temperature": 0}
    url = backend.endpoint.rstrip("/") + "/completions"
    last_error = None
    for attempt in range(backend.max_retries + 1):
        try:
            resp = requests.post(url, json=body, headers=headers,
                                 timeout=backend.timeout)
            if resp.status_code == 200:
                payload = resp.json()
                try:
                    return payload["choices"][0]["text"]
                except (KeyError, IndexError, TypeError) as exc:
                    raise BackendError(
                        f"unexpected completion response shape: {exc}") from exc
            last_error = BackendError(
                f"completion request failed with HTTP {resp.status_code}")
        except requests.RequestException as exc:
            last_error = BackendError(f"transport failure: {exc}")
        if attempt < backend.max_retries:
            time.sleep(min(2.0 ** attempt * 0.5, 8.0))
    raise last_error


def answer_http(prompt: str, backend: HttpBackend, labels: LabelSpace) -> int:
    completion = _post_completion(prompt, backend)
    return decode_label(completion, labels)


def paraphrase(text: str, backend, template: str = PARAPHRASE_FEW_SHOT) -> str:
    """Few-shot paraphrase through the HTTP backend; the mock backend is the
    identity. The reply is trimmed at the first newline."""
    if not text:
        raise ValidationError("cannot paraphrase empty text")
    if isinstance(backend, MockVoteBackend):
        return text
    prompt = template.replace("{text}", text)
    completion = _post_completion(prompt, backend)
    return completion.strip().split("\n", 1)[0].strip()
