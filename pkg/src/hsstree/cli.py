"""Command-line driver: key generation, model encryption, the two-server
service, online queries, adversarial self-checks and the benchmark table.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import bench, wire
from .errors import HssTreeError, VerificationRejected
from .hss import PaillierHss, setup
from .params import PROFILES
from .protocol import (
    MODE_GBDT,
    MODE_PLAIN,
    MODE_VERIFIABLE,
    MODES,
    ServerResponse,
    client_build_query,
    feature_map_of,
    provider_encrypt_model,
    reconstruct,
    reconstruct_gbdt,
    verify,
)
from .compare import FixedPointSpec, unscale_fixed
from .service import (
    LoopbackNet,
    ModelStore,
    ServerNode,
    TreeServer,
    loopback_query,
    loopback_upload,
    tcp_submit_query,
    tcp_upload,
)
from .tree import (
    DecisionTree,
    GbdtModel,
    encode_features,
    eval_gbdt_plain,
    eval_plain,
    load_gbdt,
    load_tree,
    pad_complete,
    random_features,
    random_tree,
)

PK_FILE = "public.key"
EK_FILES = ("server0.key", "server1.key")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REJECTED = 3
EXIT_WRONG_RESULT = 4


def _load_pk(keys_dir: str):
    return wire.decode_public_key((Path(keys_dir) / PK_FILE).read_bytes())


def _load_ek(keys_dir: str, role: int):
    return wire.decode_eval_key((Path(keys_dir) / EK_FILES[role]).read_bytes())


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _load_model_document(path: str) -> DecisionTree | GbdtModel:
    document = json.loads(Path(path).read_text())
    if "trees" in document:
        model = load_gbdt(document)
        trees = tuple(pad_complete(t, t.height) for t in model.trees)
        return GbdtModel(
            trees=trees,
            eta_encoded=model.eta_encoded,
            bias_encoded=model.bias_encoded,
        )
    tree = load_tree(document)
    return pad_complete(tree, tree.height)


def _decode_result(label_encoded: int, frac_bits: int, scale_exp: int = 1):
    if frac_bits == 0:
        return label_encoded
    return float(label_encoded / (1 << (scale_exp * frac_bits)))


def cmd_keygen(args) -> int:
    params = PROFILES[args.profile](t_bits=args.t_bits)
    rng = random.Random(args.seed) if args.seed is not None else None
    keys = setup(params, rng)
    out = Path(args.keys)
    out.mkdir(parents=True, exist_ok=True)
    (out / PK_FILE).write_bytes(wire.encode_public_key(keys.pk))
    for role, ek in enumerate(keys.eval_keys):
        (out / EK_FILES[role]).write_bytes(
            wire.encode_eval_key(ek, params.modulus_bits)
        )
    print(
        json.dumps(
            {
                "profile": args.profile,
                "modulus_bits": params.modulus_bits,
                "keys_dir": str(out),
            }
        )
    )
    return EXIT_OK


def cmd_encrypt_model(args) -> int:
    pk = _load_pk(args.keys)
    model = _load_model_document(args.model)
    hss = PaillierHss(pk, rng=random.Random(args.seed) if args.seed is not None else None)
    enc_model = provider_encrypt_model(hss, model)
    model_blob = wire.encode_encrypted_model(enc_model, pk.modulus_bits)
    map_blob = wire.encode_feature_map(feature_map_of(enc_model), pk.modulus_bits)
    store = ModelStore(args.store)
    model_id = store.put("models", model_blob)
    map_id = store.put("maps", map_blob)
    if args.server0 and args.server1:
        tcp_upload([_parse_addr(args.server0), _parse_addr(args.server1)], model_blob)
    trees = model.trees if isinstance(model, GbdtModel) else (model,)
    total_m = sum(t.m for t in trees)
    print(
        json.dumps(
            {
                "model_id": model_id,
                "map_id": map_id,
                "map_bytes": len(map_blob),
                "map_expected_bytes": total_m
                * enc_model.n
                * wire.ciphertext_width(pk.modulus_bits),
            }
        )
    )
    return EXIT_OK


def cmd_serve(args) -> int:
    role = {"server0": 0, "server1": 1}[args.role]
    pk = _load_pk(args.keys)
    ek = _load_ek(args.keys, role)
    node = ServerNode(role, pk, ek, store=ModelStore(args.store))
    server = TreeServer(node, args.host, args.port)
    print(f"{args.role} listening on {args.host}:{args.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_query(args) -> int:
    pk = _load_pk(args.keys)
    store = ModelStore(args.store)
    map_path = Path(args.map)
    map_blob = map_path.read_bytes() if map_path.exists() else store.get("maps", args.map)
    fmap, bits = wire.decode_feature_map(map_blob)
    if bits != pk.modulus_bits:
        print("feature map was published under a different profile", file=sys.stderr)
        return EXIT_ERROR
    document = json.loads(Path(args.input).read_text())
    x_encoded = encode_features(
        document["x"], fmap.n, FixedPointSpec(fmap.t, fmap.frac_bits), fmap.feature_kinds
    )
    mode = args.mode or (MODE_GBDT if fmap.gbdt else MODE_VERIFIABLE)
    client = PaillierHss(pk)
    query, mac_key = client_build_query(client, fmap, x_encoded)
    model_id = bytes.fromhex(args.model_id)
    resp0, resp1 = tcp_submit_query(
        [_parse_addr(args.server0), _parse_addr(args.server1)],
        model_id,
        query,
        mode,
        pk.modulus_bits,
        timeout=args.timeout,
    )
    return _finish_query(resp0, resp1, mode, mac_key, pk.n, fmap.frac_bits)


def _finish_query(resp0, resp1, mode, mac_key, n, frac_bits) -> int:
    try:
        if mode == MODE_PLAIN:
            label = reconstruct(resp0, resp1, n)
            result = {"label": _decode_result(label, frac_bits), "verified": None}
        elif mode == MODE_VERIFIABLE:
            label = verify(resp0, resp1, mac_key, n)
            result = {"label": _decode_result(label, frac_bits), "verified": True}
        else:
            total = reconstruct_gbdt(resp0, resp1, mac_key, n)
            result = {
                "prediction": _decode_result(total, frac_bits, scale_exp=2),
                "verified": True,
            }
    except VerificationRejected as exc:
        print(json.dumps({"verified": False, "reject_reason": exc.reason}))
        return EXIT_REJECTED
    print(json.dumps(result))
    return EXIT_OK


_TAMPER_COMPONENT = {"pc": 0, "v": 1, "w": 2}


def _tamper_response(resp: ServerResponse, spec: str, n: int, rng) -> ServerResponse:
    component, _, index = spec.partition(":")
    if component not in _TAMPER_COMPONENT:
        raise HssTreeError(f"tamper component must be one of pc/v/w, got {component!r}")
    idx = int(index) if index else 0
    comp_idx = _TAMPER_COMPONENT[component]
    rows = [list(map(list, rows)) for rows in resp.tree_rows]
    row = rows[0][idx]
    if comp_idx >= len(row):
        raise HssTreeError(f"response rows have no {component!r} component")
    row[comp_idx] = (row[comp_idx] + rng.randrange(1, n)) % n
    return ServerResponse(
        sigma=resp.sigma,
        mode=resp.mode,
        tree_rows=tuple(tuple(map(tuple, rows_)) for rows_ in rows),
        bias_share=resp.bias_share,
        bias_proof_share=resp.bias_proof_share,
    )


def cmd_verify_run(args) -> int:
    rng = random.Random(args.seed)
    params = PROFILES[args.profile](t_bits=args.t_bits)
    keys = setup(params, rng)
    pk = keys.pk
    if args.model:
        model = _load_model_document(args.model)
    else:
        model = random_tree(rng, args.height, args.n_features, args.t_bits)
    mode = args.mode
    if isinstance(model, GbdtModel) and mode != MODE_GBDT:
        mode = MODE_GBDT
    hss = PaillierHss(pk, rng=rng)
    enc_model = provider_encrypt_model(hss, model)
    model_blob = wire.encode_encrypted_model(enc_model, pk.modulus_bits)
    net = LoopbackNet()
    for role, ek in enumerate(keys.eval_keys):
        net.attach(ServerNode(role, pk, ek))
    model_id = loopback_upload(net, model_blob)

    x = random_features(rng, enc_model.n, enc_model.t)
    query, mac_key = client_build_query(hss, enc_model, x, rng=rng)
    resp0, resp1 = loopback_query(net, model_id, query, mode, pk.modulus_bits)
    if args.tamper:
        resp0 = _tamper_response(resp0, args.tamper, pk.n, rng)

    if mode == MODE_GBDT:
        expected = eval_gbdt_plain(model, x)
    else:
        expected, _, _ = eval_plain(model, x)
    try:
        if mode == MODE_PLAIN:
            got = reconstruct(resp0, resp1, pk.n)
        elif mode == MODE_VERIFIABLE:
            got = verify(resp0, resp1, mac_key, pk.n)
        else:
            got = reconstruct_gbdt(resp0, resp1, mac_key, pk.n)
    except VerificationRejected as exc:
        print(
            json.dumps(
                {
                    "verified": False,
                    "reject_reason": exc.reason,
                    "tampered": bool(args.tamper),
                    "s2s_messages": net.ledger.s2s_messages,
                }
            )
        )
        return EXIT_REJECTED
    matches = got == expected
    print(
        json.dumps(
            {
                "verified": mode != MODE_PLAIN,
                "matches_plaintext": matches,
                "tampered": bool(args.tamper),
                "s2s_messages": net.ledger.s2s_messages,
                "s2s_bytes": net.ledger.s2s_bytes,
            }
        )
    )
    return EXIT_OK if matches else EXIT_WRONG_RESULT


def cmd_bench(args) -> int:
    heights = [int(h) for h in args.heights.split(",")]
    rtt = _parse_rtt(args.rtt_ms)
    results = []
    for height in heights:
        results.append(
            bench.run_scenario(
                profile=args.profile,
                height=height,
                n_features=args.n_features,
                t_bits=args.t_bits,
                mode=args.mode,
                trials=args.trials,
                rtt_ms=rtt,
                seed=args.seed,
            )
        )
    print(bench.format_report(results))
    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=2))
        print(f"metrics written to {args.out}")
    failures = sum(r["failures"] for r in results)
    s2s = sum(r["s2s"]["messages"] for r in results)
    return EXIT_OK if failures == 0 and s2s == 0 else EXIT_ERROR


def _parse_rtt(text: str) -> float:
    # Accepts a plain number applied to both client links.
    return float(text)


def cmd_report(args) -> int:
    results = json.loads(Path(args.metrics).read_text())
    print(bench.format_report(results))
    for metrics in results:
        print()
        print(json.dumps(metrics["links"], indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsstree",
        description="Two-server private and verifiable decision-tree evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate the public and evaluation keys")
    p.add_argument("--profile", choices=sorted(PROFILES), default="test")
    p.add_argument("--keys", required=True, help="output directory")
    p.add_argument("--t-bits", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser(
        "encrypt-model",
        help="encrypt a model document and publish the feature-map blob",
    )
    p.add_argument("--keys", required=True)
    p.add_argument("--model", required=True, help="model JSON document")
    p.add_argument("--store", required=True, help="blob store directory")
    p.add_argument("--server0", default=None, help="optional host:port to upload to")
    p.add_argument("--server1", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_encrypt_model)

    p = sub.add_parser("serve", help="run one of the two servers")
    p.add_argument("--role", choices=["server0", "server1"], required=True)
    p.add_argument("--keys", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("query", help="run one online query against both servers")
    p.add_argument("--keys", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--model-id", required=True)
    p.add_argument("--map", required=True, help="feature-map blob path or store id")
    p.add_argument("--input", required=True, help='JSON file {"x": [...]}')
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--server0", required=True, help="host:port")
    p.add_argument("--server1", required=True, help="host:port")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser(
        "verify-run",
        help="self-contained loopback run with optional share tampering",
    )
    p.add_argument("--profile", choices=sorted(PROFILES), default="toy")
    p.add_argument("--model", default=None, help="model JSON; random if omitted")
    p.add_argument("--mode", choices=MODES, default=MODE_VERIFIABLE)
    p.add_argument("--height", type=int, default=3)
    p.add_argument("--n-features", type=int, default=8)
    p.add_argument("--t-bits", type=int, default=10)
    p.add_argument("--tamper", default=None, help="{pc,v,w}:{index} on server0")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify_run)

    p = sub.add_parser("bench", help="run benchmark scenarios on the loopback net")
    p.add_argument("--profile", choices=sorted(PROFILES), default="toy")
    p.add_argument("--heights", default="3,8,13")
    p.add_argument("--n-features", type=int, default=13)
    p.add_argument("--t-bits", type=int, default=10)
    p.add_argument("--mode", choices=MODES, default=MODE_VERIFIABLE)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--rtt-ms", default="0", help="injected RTT on the client links")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write metrics JSON here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="pretty-print a metrics JSON document")
    p.add_argument("--metrics", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HssTreeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
