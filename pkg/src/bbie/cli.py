"""Command-line interface: ``bbie <verb> ...``.

Verbs: keygen, token issue, node run, explorer serve, tx submit,
ingest send, scenario run, verify-anchor. Every verb accepts --config
(network config JSON, default: the bundled wine network) and --seed.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import threading
import time
import urllib.error
import urllib.request
from pathlib import Path

from .anchoring import PublicChainStub, verify_anchor
from .config import NetworkConfig
from .encoding import canonical_encode
from .errors import BBIEError
from .gateway import Gateway, make_server
from .identity import issue_token
from .keys import KeyPair
from .ledger import Transaction, load_blocks, load_chain, save_chain
from .network import Deployment
from .scenario import ScenarioFile, bundled, run_scenario
from .sim import SimConfig
from .tangle import load_tangle, save_tangle, sign_record


def _config(args: argparse.Namespace) -> NetworkConfig:
    return NetworkConfig.load(args.config or bundled("wine_config.json"))


def _json_arg(text: str) -> dict:
    if text.startswith("@"):
        text = Path(text[1:]).read_text()
    return json.loads(text)


# verbs


def cmd_keygen(args: argparse.Namespace) -> int:
    key = KeyPair.from_name(args.name, args.domain) if args.name else KeyPair.generate()
    if args.out:
        key.save(args.out)
    print(json.dumps({"address": key.address.hex(), "public": key.public.hex(), "file": args.out}))
    return 0


def cmd_token_issue(args: argparse.Namespace) -> int:
    cfg = _config(args)
    sub = cfg.key(args.sub).address.hex() if args.sub in cfg.principals else args.sub
    role = args.role or cfg.role(args.sub)
    if role is None:
        print(f"no role for {args.sub!r}; pass --role", file=sys.stderr)
        return 1
    now = int(time.time()) if args.now is None else args.now
    token = issue_token(cfg.key(cfg.issuer), sub, role, now, args.ttl or cfg.token_ttl,
                        rng=random.Random(args.seed), vocabulary=cfg.vocabulary)
    print(token.encode())
    return 0


def _deployment(cfg: NetworkConfig, args: argparse.Namespace, **overrides) -> Deployment:
    if args.seed is not None:
        overrides["seed"] = args.seed
    return Deployment(cfg, SimConfig.from_network(cfg, **overrides))


def _write_outputs(dep: Deployment, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_chain(dep.chain, out / "chain.ndjson")
    dep.stub.save(out / "stub.ndjson")
    if dep.ingestor:
        save_tangle(dep.ingestor.tangle, out / "tangle.ndjson")
    dep.sim.transcript.save(out / "transcript.ndjson")


def cmd_node_run(args: argparse.Namespace) -> int:
    """Simulate the configured network offline and write its artifacts."""
    cfg = _config(args)
    overrides = {"duration": args.duration} if args.duration else {}
    if args.scenario:
        result = run_scenario(cfg, ScenarioFile.load(args.scenario), seed=args.seed)
        dep = result.deployment
    else:
        dep = _deployment(cfg, args, **overrides)
        dep.run()
    _write_outputs(dep, Path(args.out))
    heights = {name: node.chain.height for name, node in dep.sim.nodes.items()}
    print(json.dumps({"heights": heights, "transcript": dep.sim.transcript.digest().hex(), "out": args.out}))
    return 0


def _static_gateway(cfg: NetworkConfig, args: argparse.Namespace) -> Gateway:
    chain = load_chain(args.chain)
    stub = PublicChainStub.load(args.stub) if args.stub else None
    tangle = load_tangle(args.tangle) if args.tangle else None

    def refuse(tx):
        raise BBIEError("this explorer serves a saved chain and does not accept writes")

    return Gateway(lambda: chain, cfg.key(cfg.issuer).public, lambda: int(time.time()), refuse,
                   tangle=tangle, stub=stub)


def cmd_explorer_serve(args: argparse.Namespace) -> int:
    cfg = _config(args)
    stepper = None
    if args.chain:
        gateway = _static_gateway(cfg, args)
    else:
        # live devnet: the simulator advances with the wall clock
        dep = _deployment(cfg, args, duration=10**9)
        gateway = dep.gateway
        gateway.token_clock = lambda: int(time.time())
        start = time.monotonic()

        def step() -> None:
            while True:
                time.sleep(0.05)
                with gateway.lock:
                    dep.sim.run(int((time.monotonic() - start) * args.speed))

        stepper = threading.Thread(target=step, daemon=True)
    try:
        server = make_server(gateway, args.host, args.port)
    except OSError as exc:
        print(f"cannot listen on {args.host}:{args.port}: {exc}", file=sys.stderr)
        return 1
    if stepper:
        stepper.start()
    print(f"explorer listening on http://{args.host}:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def _post(url: str, body: bytes, token: str) -> int:
    req = urllib.request.Request(url, data=body, method="POST",
                                 headers={"Authorization": f"Bearer {token}", "Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            status, payload = resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        status, payload = exc.code, exc.read()
    print(payload.decode())
    return 0 if status < 400 else 1


def _token(cfg: NetworkConfig, args: argparse.Namespace) -> str:
    if args.token:
        return args.token
    role = cfg.role(args.actor)
    return issue_token(cfg.key(cfg.issuer), cfg.key(args.actor).address.hex(), role, int(time.time()),
                       cfg.token_ttl, rng=random.Random(args.seed), vocabulary=cfg.vocabulary).encode()


def cmd_tx_submit(args: argparse.Namespace) -> int:
    cfg = _config(args)
    tx = Transaction.create(cfg.key(args.actor), args.contract, args.method, _json_arg(args.args), args.nonce)
    return _post(args.url.rstrip("/") + "/tx", canonical_encode(tx.to_dict()), _token(cfg, args))


def cmd_ingest_send(args: argparse.Namespace) -> int:
    cfg = _config(args)
    token = _token(cfg, args)
    if args.file:
        lines = [json.loads(line) for line in Path(args.file).read_text().splitlines() if line.strip()]
    else:
        device = KeyPair.from_name(f"device/{args.device}", cfg.raw.get("key_domain", "bbie-sim"))
        ts = int(time.time()) if args.ts is None else args.ts
        lines = [sign_record(device, args.topic, _json_arg(args.payload), ts)]
    code = 0
    for record in lines:
        code |= _post(args.url.rstrip("/") + "/ingest", json.dumps(record).encode(), token)
    return code


def cmd_scenario_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    scenario = ScenarioFile.load(args.scenario or bundled("wine_scenario.json"))
    result = run_scenario(cfg, scenario, seed=args.seed)
    if args.out:
        Path(args.out).write_bytes(result.to_json() + b"\n")
    if args.text:
        Path(args.text).write_text(result.to_text())
    print(result.to_text(), end="")
    if args.artifacts:
        _write_outputs(result.deployment, Path(args.artifacts))
    return 0 if result.ok else 1


def cmd_verify_anchor(args: argparse.Namespace) -> int:
    stub = PublicChainStub.load(args.stub)
    verdict = verify_anchor(stub, load_blocks(args.chain), args.source)
    print(json.dumps({"verdict": type(verdict).__name__, **verdict.__dict__}))
    return verdict.exit_code


# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="network config JSON (default: bundled wine network)")
    common.add_argument("--seed", type=int, default=None, help="PRNG seed override")

    parser = argparse.ArgumentParser(prog="bbie", description="Blockchain-based information ecosystem toolkit")
    verbs = parser.add_subparsers(dest="verb", required=True)

    p = verbs.add_parser("keygen", parents=[common], help="create an Ed25519 key file")
    p.add_argument("--out", help="write the key JSON here")
    p.add_argument("--name", help="derive deterministically from this name instead of randomly")
    p.add_argument("--domain", default="bbie-sim")
    p.set_defaults(func=cmd_keygen)

    token = verbs.add_parser("token", help="bearer tokens").add_subparsers(dest="token_verb", required=True)
    p = token.add_parser("issue", parents=[common], help="issue a token signed by the configured issuer")
    p.add_argument("--sub", required=True, help="principal name or address hex")
    p.add_argument("--role")
    p.add_argument("--ttl", type=int)
    p.add_argument("--now", type=int, help="issue time in seconds (default: wall clock)")
    p.set_defaults(func=cmd_token_issue)

    node = verbs.add_parser("node", help="run nodes").add_subparsers(dest="node_verb", required=True)
    p = node.add_parser("run", parents=[common], help="simulate the network and write chain/stub/tangle files")
    p.add_argument("--out", default="bbie-out")
    p.add_argument("--duration", type=int, help="simulated seconds (default from config)")
    p.add_argument("--scenario", help="drive the run with a scenario file")
    p.set_defaults(func=cmd_node_run)

    explorer = verbs.add_parser("explorer", help="explorer HTTP API").add_subparsers(dest="explorer_verb",
                                                                                       required=True)
    p = explorer.add_parser("serve", parents=[common], help="serve the explorer and write gateway")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8545)
    p.add_argument("--chain", help="serve this saved chain read-only instead of a live devnet")
    p.add_argument("--stub", help="saved public-chain stub for /anchors")
    p.add_argument("--tangle", help="saved tangle for /tangle/messages")
    p.add_argument("--speed", type=float, default=1.0, help="simulated seconds per wall second (live mode)")
    p.set_defaults(func=cmd_explorer_serve)

    tx = verbs.add_parser("tx", help="transactions").add_subparsers(dest="tx_verb", required=True)
    p = tx.add_parser("submit", parents=[common], help="sign and POST a transaction to a gateway")
    p.add_argument("--url", default="http://127.0.0.1:8545")
    p.add_argument("--actor", required=True, help="principal whose key signs")
    p.add_argument("--contract", default="traceability")
    p.add_argument("--method", required=True)
    p.add_argument("--args", default="{}", help="JSON object or @file")
    p.add_argument("--nonce", type=int, default=0)
    p.add_argument("--token", help="bearer token (default: issue one from the config issuer)")
    p.set_defaults(func=cmd_tx_submit)

    ingest = verbs.add_parser("ingest", help="telemetry").add_subparsers(dest="ingest_verb", required=True)
    p = ingest.add_parser("send", parents=[common], help="POST signed telemetry records to a gateway")
    p.add_argument("--url", default="http://127.0.0.1:8545")
    p.add_argument("--actor", required=True, help="principal operating the device")
    p.add_argument("--file", help="newline-delimited JSON records to replay")
    p.add_argument("--device", help="device name (key derived from it)")
    p.add_argument("--topic")
    p.add_argument("--payload", default="{}")
    p.add_argument("--ts", type=int)
    p.add_argument("--token")
    p.set_defaults(func=cmd_ingest_send)

    scenario = verbs.add_parser("scenario", help="scenarios").add_subparsers(dest="scenario_verb", required=True)
    p = scenario.add_parser("run", parents=[common], help="run a scenario and print its report")
    p.add_argument("--scenario", help="scenario JSON (default: bundled wine scenario)")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--text", help="write the text report here")
    p.add_argument("--artifacts", help="also write chain/stub/tangle/transcript files to this directory")
    p.set_defaults(func=cmd_scenario_run)

    p = verbs.add_parser("verify-anchor", parents=[common], help="check a local chain against anchored digests")
    p.add_argument("--chain", required=True)
    p.add_argument("--stub", required=True)
    p.add_argument("--source", help="source chain id (default: from the local genesis)")
    p.set_defaults(func=cmd_verify_anchor)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BBIEError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
