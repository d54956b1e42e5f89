"""Simulated client/server budgeted retrieval protocol.

The "network" is an in-process request/response exchange recorded in a
Transcript per query. All budget policies (learned allocator plus the
uniform, random, singleton, social-learning, infinite, proxy-only, and
zero-shot baselines) are implemented here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .allocator import AllocatorModel, predict_budget
from .corpus import Dataset, Example, LabelSpace
from .embedder import EmbeddingStore
from .errors import BackendError, ValidationError
from .inference import (HttpBackend, MockVoteBackend, PromptTemplate,
                        answer_http, answer_mock, build_prompt)
from .retrieval import RankedSet, merge_rerank, top_k

POLICY_VARIANTS = ("learned", "uniform", "random", "singleton",
                   "social_learning", "infinite", "proxy_only", "zero_shot")


@dataclass(frozen=True)
class BudgetPolicy:
    variant: str
    seed: int = 0
    client: int = 0

    def __post_init__(self):
        if self.variant not in POLICY_VARIANTS:
            raise ValidationError(f"unknown policy variant: {self.variant}")

    @staticmethod
    def learned():
        return BudgetPolicy("learned")

    @staticmethod
    def uniform():
        return BudgetPolicy("uniform")

    @staticmethod
    def random(seed):
        return BudgetPolicy("random", seed=seed)

    @staticmethod
    def singleton(client):
        return BudgetPolicy("singleton", client=client)

    @staticmethod
    def social_learning(seed):
        return BudgetPolicy("social_learning", seed=seed)

    @staticmethod
    def infinite():
        return BudgetPolicy("infinite")

    @staticmethod
    def proxy_only():
        return BudgetPolicy("proxy_only")

    @staticmethod
    def zero_shot():
        return BudgetPolicy("zero_shot")


@dataclass
class ClientNode:
    id: int
    shard: Dataset
    store: EmbeddingStore

    def __post_init__(self):
        self.store.check_bound(self.shard)


@dataclass
class ServerNode:
    k: int
    alpha: int = 0
    policy: BudgetPolicy = field(default_factory=BudgetPolicy.uniform)
    allocators: list[AllocatorModel] | None = None
    delta: int = 1
    proxy: Dataset | None = None
    proxy_store: EmbeddingStore | None = None
    backend: object = field(default_factory=MockVoteBackend)
    template: PromptTemplate = field(default_factory=PromptTemplate)
    labels: LabelSpace | None = None
    ice_order: str = "descending"  # distance order in the prompt
    max_prompt_chars: int = 1_000_000

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("server budget k must be >= 1")
        if self.alpha < 0:
            raise ValidationError("alpha must be nonnegative")
        if self.ice_order not in ("descending", "ascending"):
            raise ValidationError("ice_order must be descending or ascending")

    def require_ready(self, num_clients: int):
        if self.policy.variant == "learned":
            if not self.allocators or len(self.allocators) != num_clients:
                raise ValidationError(
                    "learned policy needs one allocator per client")
        if self.policy.variant == "proxy_only":
            if self.proxy is None or self.proxy_store is None:
                raise ValidationError("proxy_only policy needs the proxy set")
        if self.policy.variant == "singleton" and self.policy.client >= num_clients:
            raise ValidationError("singleton client index out of range")


@dataclass
class Transcript:
    query_id: int
    policy: str
    budgets_sent: list[int]
    samples_returned: list[list[int]]
    aggregated_ids: list[int]
    final_ice_ids: list[int]
    prompt_text: str
    prompt_chars: int
    answer_label: int | None
    total_samples_communicated: int
    fallback_zero_shot: bool = False
    raw_completion: str | None = None

    def to_dict(self):
        return {"schema_version": 1, "query_id": self.query_id,
                "policy": self.policy, "budgets_sent": self.budgets_sent,
                "samples_returned": self.samples_returned,
                "aggregated_ids": self.aggregated_ids,
                "final_ice_ids": self.final_ice_ids,
                "prompt_text": self.prompt_text,
                "prompt_chars": self.prompt_chars,
                "answer_label": self.answer_label,
                "total_samples_communicated": self.total_samples_communicated,
                "fallback_zero_shot": self.fallback_zero_shot,
                "raw_completion": self.raw_completion}

    @staticmethod
    def from_dict(obj) -> "Transcript":
        return Transcript(
            query_id=obj["query_id"], policy=obj["policy"],
            budgets_sent=list(obj["budgets_sent"]),
            samples_returned=[list(s) for s in obj["samples_returned"]],
            aggregated_ids=list(obj["aggregated_ids"]),
            final_ice_ids=list(obj["final_ice_ids"]),
            prompt_text=obj["prompt_text"], prompt_chars=obj["prompt_chars"],
            answer_label=obj["answer_label"],
            total_samples_communicated=obj["total_samples_communicated"],
            fallback_zero_shot=obj.get("fallback_zero_shot", False),
            raw_completion=obj.get("raw_completion"))


def _per_query_rng(seed: int, query_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, query_id)))


def _random_composition(k: int, parts: int, rng) -> list[int]:
    """Uniform draw from the nonnegative integer compositions of k into
    `parts` parts, via stars and bars."""
    if parts == 1:
        return [k]
    bars = np.sort(rng.choice(k + parts - 1, size=parts - 1, replace=False))
    slots = np.concatenate(([-1], bars, [k + parts - 1]))
    return [int(slots[i + 1] - slots[i] - 1) for i in range(parts)]


def allocate(policy: BudgetPolicy, e_q, server: ServerNode, clients,
             query_id: int = 0) -> list[int]:
    """Per-client budget vector for one query under the given policy."""
    c = len(clients)
    server.require_ready(c)
    variant = policy.variant
    if variant == "uniform":
        return [math.ceil(server.k / c)] * c
    if variant == "random":
        rng = _per_query_rng(policy.seed, query_id)
        return _random_composition(server.k, c, rng)
    if variant == "learned":
        return [predict_budget(server.allocators[i], e_q, server.delta)
                + server.alpha for i in range(c)]
    if variant == "singleton":
        return [server.k if i == policy.client else 0 for i in range(c)]
    if variant == "social_learning":
        return [math.ceil(server.k / c)] * c
    if variant == "infinite":
        return [len(client.shard) for client in clients]
    if variant in ("proxy_only", "zero_shot"):
        return [0] * c
    raise ValidationError(f"unknown policy variant: {variant}")


def client_retrieve(client: ClientNode, e_q, budget: int) -> RankedSet:
    """Local top-min(budget, |shard|); a zero budget returns nothing."""
    if budget < 0:
        raise ValidationError("budget must be nonnegative")
    if budget == 0:
        return RankedSet(())
    return top_k(e_q, budget, client.shard, client.store)


def _candidate_store(clients, returned: list[RankedSet], dim: int) -> EmbeddingStore:
    vectors = {}
    for client, ranked in zip(clients, returned):
        for example_id, _ in ranked:
            vectors[example_id] = client.store.get(example_id)
    return EmbeddingStore.from_dict(dim, vectors)


def _owner_lookup(clients) -> dict[int, Example]:
    lookup = {}
    for client in clients:
        for ex in client.shard:
            lookup[ex.id] = ex
    return lookup


def _finish(server: ServerNode, clients, query, e_q, final: RankedSet,
            transcript: Transcript, example_lookup):
    """Build the prompt from the final ranked set, query the backend, and
    complete the transcript."""
    entries = list(final.entries)
    if server.ice_order == "descending":
        entries = entries[::-1]  # nearest example ends up adjacent to the query
    ices = []
    ices_with_distances = []
    for example_id, dist in entries:
        ex = example_lookup[example_id]
        ices.append((ex.text, ex.label))
        ices_with_distances.append((ex.label, dist))

    labels = server.labels
    if labels is None:
        raise ValidationError("server needs a label space to answer")
    query_text = query.text if isinstance(query, Example) else str(query)
    prompt = build_prompt(ices, query_text, server.template, labels)
    if len(prompt) > server.max_prompt_chars:
        raise ValidationError(
            f"prompt of {len(prompt)} chars exceeds cap {server.max_prompt_chars}")
    transcript.prompt_text = prompt
    transcript.prompt_chars = len(prompt)
    transcript.final_ice_ids = [example_id for example_id, _ in entries]

    backend = server.backend
    try:
        if isinstance(backend, MockVoteBackend):
            answer = answer_mock(ices_with_distances, query_text)
        elif isinstance(backend, HttpBackend):
            answer = answer_http(prompt, backend, labels)
        else:
            raise ValidationError(f"unknown backend: {backend!r}")
    except BackendError as exc:
        exc.transcript = transcript
        raise
    transcript.answer_label = answer
    return answer, transcript


def distributed_infer(server: ServerNode, clients, query, e_q):
    """One full budgeted inference round (Alg.-style): allocate budgets,
    gather client returns, reorder-aggregate to top-k, prompt, answer."""
    policy = server.policy
    if policy.variant == "social_learning":
        return social_learning_infer(server, clients, e_q, policy.seed,
                                     query=query)
    query_id = query.id if isinstance(query, Example) else -1
    budgets = allocate(policy, e_q, server, clients, query_id=query_id)
    transcript = Transcript(
        query_id=query_id, policy=policy.variant, budgets_sent=list(budgets),
        samples_returned=[[] for _ in clients], aggregated_ids=[],
        final_ice_ids=[], prompt_text="", prompt_chars=0, answer_label=None,
        total_samples_communicated=0)

    if policy.variant == "zero_shot":
        lookup = {}
        final = RankedSet(())
    elif policy.variant == "proxy_only":
        lookup = {ex.id: ex for ex in server.proxy}
        final = top_k(e_q, server.k, server.proxy, server.proxy_store)
    else:
        returned = [client_retrieve(client, e_q, budget)
                    for client, budget in zip(clients, budgets)]
        transcript.samples_returned = [ranked.ids for ranked in returned]
        transcript.total_samples_communicated = sum(len(r) for r in returned)
        dim = clients[0].store.dim
        candidate_store = _candidate_store(clients, returned, dim)
        union_ids = sorted(candidate_store.ids)
        transcript.aggregated_ids = union_ids
        final = merge_rerank(e_q, server.k, [union_ids], candidate_store) \
            if union_ids else RankedSet(())
        if not union_ids:
            transcript.fallback_zero_shot = True
        lookup = _owner_lookup(clients)
    return _finish(server, clients, query, e_q, final, transcript, lookup)


def social_learning_infer(server: ServerNode, clients, e_q, seed, query=None):
    """Each client returns its local top-ceil(k/C); the server picks k ICEs
    uniformly at random (seeded) from the union instead of reranking."""
    c = len(clients)
    per_client = math.ceil(server.k / c)
    query_id = query.id if isinstance(query, Example) else -1
    returned = [client_retrieve(client, e_q, per_client) for client in clients]
    transcript = Transcript(
        query_id=query_id, policy="social_learning",
        budgets_sent=[per_client] * c,
        samples_returned=[r.ids for r in returned],
        aggregated_ids=[], final_ice_ids=[], prompt_text="", prompt_chars=0,
        answer_label=None,
        total_samples_communicated=sum(len(r) for r in returned))

    pairs = {}
    for ranked in returned:
        for example_id, dist in ranked:
            pairs[example_id] = dist
    union_ids = sorted(pairs)
    transcript.aggregated_ids = union_ids
    rng = _per_query_rng(seed, query_id)
    take = min(server.k, len(union_ids))
    if take:
        chosen = rng.choice(len(union_ids), size=take, replace=False)
        selected = sorted((pairs[union_ids[i]], union_ids[i]) for i in chosen)
        final = RankedSet(tuple((example_id, dist) for dist, example_id in selected))
    else:
        final = RankedSet(())
        transcript.fallback_zero_shot = True
    return _finish(server, clients, query, e_q, final, transcript,
                   _owner_lookup(clients))


def save_transcripts(transcripts, path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")


def load_transcripts(path) -> list[Transcript]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Transcript.from_dict(json.loads(line)))
    return out


def replay_transcript(t: Transcript, clients, e_q, k: int) -> bool:
    """Re-run the recorded budgets against the same shards and confirm the
    returned samples and final ICE set reproduce exactly."""
    returned = [client_retrieve(client, e_q, budget)
                for client, budget in zip(clients, t.budgets_sent)]
    if [r.ids for r in returned] != t.samples_returned:
        return False
    if t.policy == "social_learning":
        return True  # final set depends on the recorded seeded draw
    dim = clients[0].store.dim
    candidate_store = _candidate_store(clients, returned, dim)
    if not candidate_store.ids:
        return t.final_ice_ids == []
    final = merge_rerank(e_q, k, [candidate_store.ids], candidate_store)
    return sorted(t.final_ice_ids) == sorted(final.ids)
