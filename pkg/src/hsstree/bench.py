"""Benchmark scenarios over the loopback harness.

Counts (gates, bytes, messages, share counts) are deterministic under a
fixed seed; only wall-clock timings vary between runs.
"""

from __future__ import annotations

import random
import statistics
import time

from . import wire
from .compare import sic_gate_count
from .errors import VerificationRejected
from .hss import PaillierHss, setup
from .params import PROFILES
from .protocol import (
    MODE_GBDT,
    MODE_PLAIN,
    MODE_VERIFIABLE,
    client_build_query,
    feature_map_of,
    provider_encrypt_model,
    reconstruct,
    reconstruct_gbdt,
    verify,
)
from .service import LINK_CLIENT_S0, LINK_CLIENT_S1, LoopbackNet, ServerNode, loopback_query, loopback_upload
from .tree import eval_gbdt_plain, eval_plain, random_features, random_gbdt, random_tree


def run_scenario(
    profile: str = "toy",
    height: int = 3,
    n_features: int = 13,
    t_bits: int = 10,
    mode: str = MODE_VERIFIABLE,
    trials: int = 5,
    rtt_ms: float = 0.0,
    seed: int = 0,
    n_trees: int = 3,
    keys=None,
) -> dict:
    """Run one scenario end to end on the loopback network.

    Returns a metrics document: gate counts with their closed-form
    expectations, per-link traffic, blob sizes against the m*n ciphertext
    budget, response share counts, and timing summaries.
    """
    rng = random.Random(seed)
    params = PROFILES[profile](t_bits=t_bits)
    if keys is None:
        keys = setup(params, rng)
    pk = keys.pk

    if mode == MODE_GBDT:
        model = random_gbdt(rng, n_trees, height, n_features, t_bits)
    else:
        model = random_tree(rng, height, n_features, t_bits)

    provider = PaillierHss(pk, rng=rng)
    encrypt_started = time.perf_counter()
    enc_model = provider_encrypt_model(provider, model)
    encrypt_s = time.perf_counter() - encrypt_started

    model_blob = wire.encode_encrypted_model(enc_model, pk.modulus_bits)
    map_blob = wire.encode_feature_map(feature_map_of(enc_model), pk.modulus_bits)

    net = LoopbackNet()
    net.set_rtt(LINK_CLIENT_S0, rtt_ms)
    net.set_rtt(LINK_CLIENT_S1, rtt_ms)
    nodes = [ServerNode(role, pk, ek) for role, ek in enumerate(keys.eval_keys)]
    for node in nodes:
        net.attach(node)
    model_id = loopback_upload(net, model_blob)

    fmap, _ = wire.decode_feature_map(map_blob)
    client = PaillierHss(pk, rng=rng)

    trees = model.trees if mode == MODE_GBDT else (model,)
    total_m = sum(tree.m for tree in trees)
    total_k = sum(tree.k for tree in trees)
    per_node_gates = sic_gate_count(t_bits)
    if mode == MODE_PLAIN:
        expected_gates = total_m * per_node_gates + total_k
    elif mode == MODE_VERIFIABLE:
        expected_gates = total_m * per_node_gates + 2 * total_k
    else:
        expected_gates = total_m * per_node_gates + 3 * total_k + 2

    query_times = []
    compute_times = {0: [], 1: []}
    gate_counts = {0: [], 1: []}
    share_counts = []
    failures = 0
    for _ in range(trials):
        x = random_features(rng, n_features, t_bits)
        query, mac_key = client_build_query(client, fmap, x, rng=rng)
        started = time.perf_counter()
        resp0, resp1 = loopback_query(net, model_id, query, mode, pk.modulus_bits)
        query_times.append(time.perf_counter() - started)
        share_counts.append(
            sum(len(row) for rows in resp0.tree_rows for row in rows)
            + (2 if resp0.bias_share is not None else 0)
        )
        try:
            if mode == MODE_PLAIN:
                got = reconstruct(resp0, resp1, pk.n)
                want, _, _ = eval_plain(model, x)
            elif mode == MODE_VERIFIABLE:
                got = verify(resp0, resp1, mac_key, pk.n)
                want, _, _ = eval_plain(model, x)
            else:
                got = reconstruct_gbdt(resp0, resp1, mac_key, pk.n)
                want = eval_gbdt_plain(model, x)
            if got != want:
                failures += 1
        except VerificationRejected:
            failures += 1
        for node in nodes:
            log = node.query_log[-1]
            compute_times[node.role].append(log["compute_s"])
            gate_counts[node.role].append(log["mul_gates"])

    ct_bytes = wire.ciphertext_width(pk.modulus_bits)
    expected_map_bytes = total_m * n_features * ct_bytes
    return {
        "scenario": {
            "profile": profile,
            "modulus_bits": pk.modulus_bits,
            "height": height,
            "n_features": n_features,
            "t_bits": t_bits,
            "mode": mode,
            "trials": trials,
            "rtt_ms": rtt_ms,
            "seed": seed,
            "n_trees": len(trees),
            "total_nodes": total_m,
            "total_leaves": total_k,
        },
        "gates": {
            "per_node_comparison": per_node_gates,
            "expected_per_query": expected_gates,
            "observed_server0": gate_counts[0],
            "observed_server1": gate_counts[1],
        },
        "sizes": {
            "ciphertext_bytes": ct_bytes,
            "model_blob_bytes": len(model_blob),
            "feature_map_blob_bytes": len(map_blob),
            "feature_map_expected_bytes": expected_map_bytes,
            "feature_map_overhead": (
                (len(map_blob) - expected_map_bytes) / expected_map_bytes
                if expected_map_bytes
                else 0.0
            ),
            "response_shares_per_server": share_counts,
        },
        "links": net.ledger.snapshot(),
        "s2s": {
            "messages": net.ledger.s2s_messages,
            "bytes": net.ledger.s2s_bytes,
        },
        "timings_s": {
            "model_encrypt": encrypt_s,
            "query_round_trip": _summary(query_times),
            "server0_compute": _summary(compute_times[0]),
            "server1_compute": _summary(compute_times[1]),
        },
        "failures": failures,
    }


def _summary(samples: list[float]) -> dict:
    if not samples:
        return {"n": 0}
    return {
        "n": len(samples),
        "mean": statistics.fmean(samples),
        "median": statistics.median(samples),
        "min": min(samples),
        "max": max(samples),
    }


def format_report(metrics_list: list[dict]) -> str:
    """Plain-text table over a list of scenario metric documents."""
    lines = []
    header = (
        f"{'mode':<11} {'h':>3} {'t':>3} {'n':>4} {'gates/query':>12} "
        f"{'expected':>9} {'S2S msgs':>8} {'map KiB':>10} {'median query s':>15}"
    )
    lines.append(header)
    lines.append("-" * len(header))
    for metrics in metrics_list:
        sc = metrics["scenario"]
        gates = metrics["gates"]
        observed = sorted(set(gates["observed_server0"] + gates["observed_server1"]))
        observed_text = (
            str(observed[0]) if len(observed) == 1 else ",".join(map(str, observed))
        )
        lines.append(
            f"{sc['mode']:<11} {sc['height']:>3} {sc['t_bits']:>3} "
            f"{sc['n_features']:>4} {observed_text:>12} "
            f"{gates['expected_per_query']:>9} {metrics['s2s']['messages']:>8} "
            f"{metrics['sizes']['feature_map_blob_bytes'] / 1024:>10.1f} "
            f"{metrics['timings_s']['query_round_trip'].get('median', 0):>15.4f}"
        )
        if metrics["failures"]:
            lines.append(f"  !! {metrics['failures']} reconstruction failures")
    return "\n".join(lines)
