"""End-to-end experiment orchestration.

run_experiment executes partition -> embed -> budget dataset -> allocator
training -> per-policy evaluation, caching every artifact under the output
directory, and writes a deterministic JSON report plus transcript JSONL and
a budget-histogram CSV.
"""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from . import __version__
from .allocator import TrainConfig, load_model, save_model, train
from .config import ExperimentConfig, derive_seed
from .corpus import (Dataset, load_dataset, load_shard_manifest, partition_iid,
                     partition_noniid, PartitionSpec, sample_proxy,
                     synth_clusters, write_shard_manifest)
from .embedder import HashEncoder, encode_dataset, load_embeddings
from .errors import ValidationError
from .federation import (BudgetPolicy, ClientNode, ServerNode,
                         distributed_infer, load_transcripts, save_transcripts)
from .inference import HttpBackend, MockVoteBackend
from .oracle import (construct_budget_dataset, load_budget_dataset,
                     save_budget_dataset)
from .retrieval import top_k

SCHEMA_VERSION = 1


def evaluate_accuracy(answers) -> float:
    """Fraction of (predicted, gold) pairs that agree."""
    answers = list(answers)
    if not answers:
        raise ValidationError("cannot evaluate accuracy on no answers")
    return sum(1 for predicted, gold in answers if predicted == gold) / len(answers)


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("cannot summarize an empty value list")
    return float(arr.mean()), float(arr.std())


class _SeedContext:
    """All artifacts of one seeded run: data, shards, stores, proxy/test."""

    def __init__(self, cfg: ExperimentConfig, run_seed: int, out_dir: str):
        self.cfg = cfg
        self.run_seed = run_seed
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self._load_data()
        self._partition()
        self._split_proxy()

    def _load_data(self):
        cfg = self.cfg
        if cfg.synthetic is not None:
            spec = cfg.synthetic
            means_seed = derive_seed(self.run_seed, "synth-means")
            self.train_ds, self.train_store = synth_clusters(
                spec.num_classes, spec.per_class_train, spec.dim, spec.spread,
                derive_seed(self.run_seed, "synth-train"),
                means_seed=means_seed, scale=spec.scale,
                label_noise=spec.label_noise)
            self.eval_ds, self.eval_store = synth_clusters(
                spec.num_classes, spec.per_class_eval, spec.dim, spec.spread,
                derive_seed(self.run_seed, "synth-eval"),
                id_offset=len(self.train_ds), means_seed=means_seed,
                scale=spec.scale)
        else:
            self.train_ds = load_dataset(cfg.dataset.train_path)
            self.eval_ds = load_dataset(cfg.dataset.eval_path)
            # file eval sets get ids offset so train/eval ids never collide
            offset = max(self.train_ds.ids) + 1
            from .corpus import Example
            self.eval_ds = Dataset(
                tuple(Example(ex.id + offset, ex.text, ex.label)
                      for ex in self.eval_ds.examples),
                self.eval_ds.labels)
            if cfg.embeddings.source == "hash":
                encoder = HashEncoder(cfg.embeddings.dim,
                                      derive_seed(cfg.seed, "hash-encoder"))
                self.train_store = encode_dataset(self.train_ds, encoder)
                self.eval_store = encode_dataset(self.eval_ds, encoder)
            else:
                self.train_store = load_embeddings(cfg.embeddings.train_path)
                raw_eval = load_embeddings(cfg.embeddings.eval_path)
                from .embedder import EmbeddingStore
                self.eval_store = EmbeddingStore.from_dict(
                    raw_eval.dim,
                    {i + offset: raw_eval.get(i) for i in raw_eval.ids})
        if self.train_store.dim != self.eval_store.dim:
            raise ValidationError("train/eval embedding dimensions differ")
        self.train_store.check_bound(self.train_ds)
        self.eval_store.check_bound(self.eval_ds)

    def _partition(self):
        cfg = self.cfg
        seed = derive_seed(self.run_seed, "partition")
        manifest_path = os.path.join(self.out_dir, "shards.json")
        if os.path.exists(manifest_path):
            self.shards = load_shard_manifest(self.train_ds, manifest_path)
        else:
            if cfg.partition.scheme == "noniid":
                spec = PartitionSpec(cfg.partition.num_clients,
                                     cfg.partition.labels_per_client, seed)
                self.shards = partition_noniid(self.train_ds, spec)
            else:
                self.shards = partition_iid(self.train_ds,
                                            cfg.partition.num_clients, seed)
            write_shard_manifest(self.shards, manifest_path)
        self.shard_stores = [self.train_store.subset(s.ids) for s in self.shards]
        self.clients = [ClientNode(i, shard, store)
                        for i, (shard, store)
                        in enumerate(zip(self.shards, self.shard_stores))]

    def _split_proxy(self):
        cfg = self.cfg
        if cfg.proxy_size >= len(self.eval_ds):
            raise ValidationError(
                f"proxy_size {cfg.proxy_size} must be below the evaluation "
                f"pool size {len(self.eval_ds)}")
        self.proxy, self.test = sample_proxy(
            self.eval_ds, cfg.proxy_size, derive_seed(self.run_seed, "proxy"))
        self.proxy_store = self.eval_store.subset(self.proxy.ids)
        self.test_store = self.eval_store.subset(self.test.ids)

    def budget_dataset(self):
        path = os.path.join(self.out_dir, "bproxy.jsonl")
        if os.path.exists(path):
            return load_budget_dataset(path)
        bproxy = construct_budget_dataset(
            self.proxy, self.proxy_store, self.shards, self.shard_stores,
            self.cfg.k, self.cfg.delta, union_store=self.train_store)
        save_budget_dataset(bproxy, path)
        return bproxy

    def allocators(self):
        cfg = self.cfg
        model_dir = os.path.join(self.out_dir, "models")
        os.makedirs(model_dir, exist_ok=True)
        models = []
        bproxy = None
        for c in range(cfg.partition.num_clients):
            json_path = os.path.join(model_dir, f"client{c}.json")
            blob_path = os.path.join(model_dir, f"client{c}.bin")
            if os.path.exists(json_path) and os.path.exists(blob_path):
                models.append(load_model(json_path, blob_path))
                continue
            if bproxy is None:
                bproxy = self.budget_dataset()
            train_cfg = TrainConfig(
                epochs=cfg.train.epochs,
                learning_rate=cfg.train.learning_rate,
                batch_size=cfg.train.batch_size,
                seed=derive_seed(self.run_seed, f"shuffle-{c}"),
                validation_fraction=cfg.train.validation_fraction)
            scale = cfg.synthetic.scale if cfg.synthetic is not None else 1.0
            model = train(bproxy, c, train_cfg, width=cfg.train.width,
                          init_seed=derive_seed(self.run_seed, f"init-{c}"),
                          input_scale=1.0 / scale)
            save_model(model, json_path, blob_path)
            models.append(model)
        return models

    def make_server(self, policy: BudgetPolicy) -> ServerNode:
        cfg = self.cfg
        if cfg.backend.type == "http":
            backend = HttpBackend(endpoint=cfg.backend.endpoint,
                                  model=cfg.backend.model,
                                  auth_env=cfg.backend.auth_env,
                                  timeout=cfg.backend.timeout,
                                  max_retries=cfg.backend.max_retries,
                                  max_tokens=cfg.backend.max_tokens)
        else:
            backend = MockVoteBackend()
        server = ServerNode(
            k=cfg.k, alpha=cfg.alpha, policy=policy, delta=cfg.delta,
            backend=backend, labels=self.train_ds.labels,
            ice_order=cfg.ice_order, max_prompt_chars=cfg.max_prompt_chars)
        if policy.variant == "learned":
            server.allocators = self.allocators()
        if policy.variant == "proxy_only":
            server.proxy = self.proxy
            server.proxy_store = self.proxy_store
        return server


def _policy_for(name: str, run_seed: int, client: int = 0) -> BudgetPolicy:
    if name == "random":
        return BudgetPolicy.random(derive_seed(run_seed, "policy-random"))
    if name == "social_learning":
        return BudgetPolicy.social_learning(derive_seed(run_seed, "policy-social"))
    if name == "singleton":
        return BudgetPolicy.singleton(client)
    return BudgetPolicy(name)


def _evaluate_policy(ctx: _SeedContext, name: str):
    """Run one policy over the whole test set; returns (accuracy, total
    communicated samples, transcripts)."""
    if name == "singleton":
        # averaged over every choice of the single client
        accs, totals = [], []
        all_transcripts = []
        for c in range(len(ctx.clients)):
            server = ctx.make_server(_policy_for(name, ctx.run_seed, client=c))
            answers, transcripts = _run_queries(ctx, server)
            accs.append(evaluate_accuracy(answers))
            totals.append(sum(t.total_samples_communicated for t in transcripts))
            all_transcripts.extend(transcripts)
        return float(np.mean(accs)), float(np.mean(totals)), all_transcripts
    server = ctx.make_server(_policy_for(name, ctx.run_seed))
    answers, transcripts = _run_queries(ctx, server)
    total = sum(t.total_samples_communicated for t in transcripts)
    return evaluate_accuracy(answers), float(total), transcripts


def _run_queries(ctx: _SeedContext, server: ServerNode):
    answers = []
    transcripts = []
    for ex in ctx.test.examples:
        e_q = ctx.test_store.get(ex.id)
        predicted, transcript = distributed_infer(server, ctx.clients, ex, e_q)
        answers.append((predicted, ex.label))
        transcripts.append(transcript)
    return answers, transcripts


def _budget_histogram(transcripts, num_clients: int):
    """Per-client counts of sent budget values."""
    hists = [{} for _ in range(num_clients)]
    for t in transcripts:
        for c, budget in enumerate(t.budgets_sent):
            hists[c][str(budget)] = hists[c].get(str(budget), 0) + 1
    return hists


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Execute every stage for every seed and write report + artifacts."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    policy_results = {name: {"per_seed_accuracy": [],
                             "per_seed_samples_communicated": []}
                      for name in cfg.policies}
    histograms = []
    contexts = []
    for i in range(cfg.num_seeds):
        run_seed = derive_seed(cfg.seed, f"run{i}")
        seed_dir = os.path.join(cfg.output_dir, f"seed{i}")
        try:
            ctx = _SeedContext(cfg, run_seed, seed_dir)
        except Exception as exc:
            raise type(exc)(f"stage 'setup' (seed {i}): {exc}") from exc
        contexts.append(ctx)
        for name in cfg.policies:
            transcript_path = os.path.join(seed_dir, f"transcripts_{name}.jsonl")
            try:
                acc, total, transcripts = _evaluate_policy(ctx, name)
            except Exception as exc:
                raise type(exc)(f"stage 'evaluate:{name}' (seed {i}): {exc}") from exc
            save_transcripts(transcripts, transcript_path)
            policy_results[name]["per_seed_accuracy"].append(acc)
            policy_results[name]["per_seed_samples_communicated"].append(total)
            if name == "learned":
                histograms.append(
                    {"seed_index": i,
                     "per_client": _budget_histogram(
                         transcripts, cfg.partition.num_clients)})

    for name, result in policy_results.items():
        mean, std = mean_std(result["per_seed_accuracy"])
        result["mean_accuracy"] = mean
        result["std_accuracy"] = std

    report = {"schema_version": SCHEMA_VERSION, "version": __version__,
              "name": cfg.name, "config": cfg.to_dict(),
              "policies": policy_results, "budget_histograms": histograms,
              "num_test_queries": len(contexts[0].test)}
    report_path = os.path.join(cfg.output_dir, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_histogram_csv(histograms,
                         os.path.join(cfg.output_dir, "budget_hist.csv"))
    return report


def _write_histogram_csv(histograms, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed_index", "client", "budget_value", "count"])
        for entry in histograms:
            for c, hist in enumerate(entry["per_client"]):
                for budget in sorted(hist, key=int):
                    writer.writerow([entry["seed_index"], c, budget,
                                     hist[budget]])


def budget_efficiency_curve(transcripts, shards, shard_stores, global_dataset,
                            global_store, query_store, k, multipliers):
    """Mean recall of the global top-k set when every recorded per-client
    budget is scaled by each multiplier (rounded up)."""
    rows = []
    per_query_budgets = [(t.query_id, t.budgets_sent) for t in transcripts]
    global_tops = {}
    for query_id, _ in per_query_budgets:
        e_q = query_store.get(query_id)
        global_tops[query_id] = top_k(e_q, k, global_dataset,
                                      global_store).id_set()
    for m in multipliers:
        recalls = []
        for query_id, budgets in per_query_budgets:
            e_q = query_store.get(query_id)
            union = set()
            for shard, store, budget in zip(shards, shard_stores, budgets):
                scaled = math.ceil(m * budget)
                if scaled > 0:
                    union |= top_k(e_q, scaled, shard, store).id_set()
            recalls.append(len(union & global_tops[query_id]) / k)
        rows.append({"multiplier": float(m),
                     "mean_recall": float(np.mean(recalls)) if recalls else 0.0})
    return rows


def efficiency_curve_from_run(cfg: ExperimentConfig, seed_index: int,
                              multipliers, transcripts=None):
    """Rebuild the seeded run's shards and compute the efficiency curve from
    its learned-policy transcripts."""
    run_seed = derive_seed(cfg.seed, f"run{seed_index}")
    seed_dir = os.path.join(cfg.output_dir, f"seed{seed_index}")
    ctx = _SeedContext(cfg, run_seed, seed_dir)
    if transcripts is None:
        path = os.path.join(seed_dir, "transcripts_learned.jsonl")
        if not os.path.exists(path):
            raise ValidationError(f"no learned transcripts at {path}")
        transcripts = load_transcripts(path)
    return budget_efficiency_curve(
        transcripts, ctx.shards, ctx.shard_stores, ctx.train_ds,
        ctx.train_store, ctx.test_store, cfg.k, multipliers)
