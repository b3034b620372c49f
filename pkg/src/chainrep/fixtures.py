"""Synthetic labelled contract corpus for end-to-end runs.

Reputable contracts get smooth Poisson-like hourly traffic with a diurnal
cycle, a stable sender pool, near-zero failure rates and bytecode dominated
by arithmetic/memory/flow work. Illicit contracts get sparse baseline
traffic punctuated by hard bursts (many fresh senders, large values, drain
transfers), a high failed-transaction rate and bytecode mildly tilted toward
storage/system opcodes. The behavioural gap is strong; the structural gap is
deliberately subtle (per-contract mixture drift overlaps the classes) so a
classifier trained on a handful of minority contracts generalises poorly
until the minority is augmented. The generator only guarantees the gaps
exist, not that any model finds them.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .disasm import CATEGORY_NAMES, _CATEGORY_RANGES, _push_immediate_size

__all__ = ["make_fixture", "REPUTABLE_CATEGORY_WEIGHTS", "ILLICIT_CATEGORY_WEIGHTS"]

_BASE_TS = 1_700_000_000 - (1_700_000_000 % 3600)

REPUTABLE_CATEGORY_WEIGHTS: dict[str, float] = {
    "Push": 0.21,
    "Arithmetic": 0.17,
    "Memory": 0.15,
    "Flow": 0.14,
    "Dup": 0.09,
    "Swap": 0.08,
    "ComparisonLogic": 0.07,
    "Environment": 0.04,
    "StackPop": 0.02,
    "Storage": 0.015,
    "Crypto": 0.01,
    "Block": 0.005,
    "Log": 0.005,
    "System": 0.005,
}

ILLICIT_CATEGORY_WEIGHTS: dict[str, float] = {
    "Push": 0.2,
    "Arithmetic": 0.155,
    "Memory": 0.14,
    "Flow": 0.1325,
    "Dup": 0.085,
    "Swap": 0.075,
    "ComparisonLogic": 0.0675,
    "Environment": 0.0425,
    "StackPop": 0.02,
    "Storage": 0.0312,
    "Crypto": 0.0175,
    "Block": 0.0063,
    "Log": 0.0063,
    "System": 0.0262,
    "Invalid": 0.0025,
}


def _weights_vector(weights: dict[str, float]) -> np.ndarray:
    v = np.zeros(len(CATEGORY_NAMES))
    for name, w in weights.items():
        v[CATEGORY_NAMES.index(name)] = w
    return v / v.sum()


def _random_address(rng: np.random.Generator) -> str:
    return "0x" + "".join(rng.choice(list("0123456789abcdef"), size=40))


def _make_bytecode(rng: np.random.Generator, probs: np.ndarray, n_ops: int) -> str:
    members = {
        CATEGORY_NAMES.index(name): values for name, values in _CATEGORY_RANGES.items()
    }
    members[CATEGORY_NAMES.index("Invalid")] = [0xFE]
    out = bytearray()
    cats = rng.choice(len(CATEGORY_NAMES), size=n_ops, p=probs)
    for cat in cats:
        byte = int(rng.choice(members[int(cat)]))
        out.append(byte)
        width = _push_immediate_size(byte)
        if width:
            out.extend(rng.integers(0, 256, size=width, dtype=np.uint8).tobytes())
    return "0x" + bytes(out).hex()


def _spread_timestamps(rng: np.random.Generator, hour_start: int, count: int) -> list[int]:
    offsets = np.sort(rng.integers(0, 3600, size=count))
    return [int(hour_start + o) for o in offsets]


def _tx(ts: int, from_addr: str, to_addr: str, value: int, gas_used: int,
        gas_price: int, is_error: bool) -> dict:
    return {
        "blockNumber": str(ts // 12),
        "timeStamp": str(ts),
        "from": from_addr,
        "to": to_addr,
        "value": str(int(value)),
        "gasUsed": str(int(gas_used)),
        "gasPrice": str(int(gas_price)),
        "isError": "1" if is_error else "0",
    }


def _internal_tx(ts: int, from_addr: str, to_addr: str, value: int, gas_used: int) -> dict:
    return {
        "blockNumber": str(ts // 12),
        "timeStamp": str(ts),
        "from": from_addr,
        "to": to_addr,
        "value": str(int(value)),
        "gasUsed": str(int(gas_used)),
        "isError": "0",
    }


def _reputable_activity(rng: np.random.Generator, address: str) -> tuple[list, list]:
    hours = int(rng.integers(150, 210))
    start = _BASE_TS + int(rng.integers(0, 720)) * 3600
    pool = [_random_address(rng) for _ in range(int(rng.integers(70, 81)))]
    base_rate = rng.uniform(6.8, 7.6)
    phase = rng.uniform(0, 24)
    base_gwei = rng.uniform(30, 35) * 1e9
    fail_p = rng.uniform(0.002, 0.01)
    internal_share = rng.uniform(0.18, 0.22)

    txlist: list[dict] = []
    internal: list[dict] = []
    for h in range(hours):
        rate = base_rate * (1.0 + 0.35 * math.sin(2 * math.pi * (h + phase) / 24.0))
        count = int(rng.poisson(max(rate, 0.1)))
        if h == 0 and count == 0:
            count = 1  # pin the first hour so the span starts here
        hour_start = start + h * 3600
        gwei = base_gwei * (1.0 + 0.15 * math.sin(2 * math.pi * (h + phase) / 24.0))
        for ts in _spread_timestamps(rng, hour_start, count):
            sender = pool[int(rng.integers(0, len(pool)))]
            failed = rng.uniform() < fail_p
            value = float(rng.lognormal(math.log(1e16), 0.9))
            gas_used = max(21000, rng.normal(60000, 15000))
            gas_price = gwei * rng.uniform(0.9, 1.1)
            txlist.append(_tx(ts, sender, address, value, gas_used, gas_price, failed))
            if not failed and rng.uniform() < internal_share:
                out_to = pool[int(rng.integers(0, len(pool)))]
                internal.append(
                    _internal_tx(ts, address, out_to, value * rng.uniform(0.2, 0.9), 9000)
                )
    return txlist, internal


def _illicit_activity(rng: np.random.Generator, address: str) -> tuple[list, list]:
    hours = int(rng.integers(110, 170))
    start = _BASE_TS + int(rng.integers(0, 720)) * 3600
    pool = [_random_address(rng) for _ in range(int(rng.integers(8, 25)))]
    attacker = _random_address(rng)
    base_rate = rng.uniform(0.8, 2.5)
    base_gwei = rng.uniform(15, 60) * 1e9
    fail_p = rng.uniform(0.22, 0.42)

    counts = rng.poisson(base_rate, size=hours)
    counts[0] = max(counts[0], 1)
    # bursts roughly every 30-45 hours, always at least two
    n_bursts = max(2, hours // 40)
    burst_hours = sorted(
        int(v) for v in rng.choice(np.arange(4, hours - 2), size=n_bursts, replace=False)
    )
    median = float(np.median(counts))
    burst_size = int(max(20, math.ceil(6 * max(median, 1.0))))

    txlist: list[dict] = []
    internal: list[dict] = []
    for h in range(hours):
        hour_start = start + h * 3600
        burst = h in burst_hours
        count = burst_size + int(rng.integers(0, 15)) if burst else int(counts[h])
        gwei = base_gwei * rng.uniform(0.8, 1.4)
        for ts in _spread_timestamps(rng, hour_start, count):
            if burst:
                sender = _random_address(rng)  # fresh victim
                value = float(rng.lognormal(math.log(3e17), 1.2))
                failed = rng.uniform() < fail_p * 0.5
            else:
                sender = pool[int(rng.integers(0, len(pool)))]
                value = float(rng.lognormal(math.log(5e15), 1.3))
                failed = rng.uniform() < fail_p
            gas_used = max(21000, rng.normal(52000, 18000))
            gas_price = gwei * rng.uniform(0.8, 1.3)
            txlist.append(_tx(ts, sender, address, value, gas_used, gas_price, failed))
        if burst:
            # drain what came in
            drain_ts = hour_start + 3599
            internal.append(
                _internal_tx(drain_ts, address, attacker, float(rng.lognormal(math.log(5e18), 0.5)), 9000)
            )
    return txlist, internal


def make_fixture(
    out_dir: str | Path,
    n_reputable: int = 40,
    n_illicit: int = 10,
    seed: int = 7,
) -> Path:
    """Write a labelled fixture corpus and return its directory.

    One Etherscan-shaped JSON per contract plus a labels.csv sidecar. The
    same arguments always produce byte-identical files.
    """
    if n_reputable < 1 or n_illicit < 1:
        raise ValueError("need at least one contract per class")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rep_probs = _weights_vector(REPUTABLE_CATEGORY_WEIGHTS)
    ill_probs = _weights_vector(ILLICIT_CATEGORY_WEIGHTS)

    rows: list[tuple[str, str]] = []
    seen: set[str] = set()
    plan = [("reputable", i) for i in range(n_reputable)] + [
        ("illicit", i) for i in range(n_illicit)
    ]
    # one independent stream triple per contract, so the address, the
    # bytecode and the activity of one contract never shift when an
    # unrelated part of the generator changes
    children = np.random.SeedSequence(seed).spawn(len(plan))
    for (label, _), child in zip(plan, children):
        addr_rng, code_rng, act_rng = (
            np.random.default_rng(s) for s in child.spawn(3)
        )
        address = _random_address(addr_rng)
        while address in seen:
            address = _random_address(addr_rng)
        seen.add(address)

        if label == "reputable":
            # mild per-contract drift around the base mixture
            probs = code_rng.dirichlet(rep_probs * 80.0 + 1e-3)
            txlist, internal = _reputable_activity(act_rng, address)
        else:
            probs = code_rng.dirichlet(ill_probs * 30.0 + 1e-3)
            txlist, internal = _illicit_activity(act_rng, address)
        bytecode = _make_bytecode(code_rng, probs, int(code_rng.integers(300, 800)))

        payload = {
            "address": address,
            "bytecode": bytecode,
            "txlist": txlist,
            "txlistinternal": internal,
        }
        (out / f"{address}.json").write_text(
            json.dumps(payload, separators=(",", ":")) + "\n"
        )
        rows.append((address, label))

    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["address", "label"])
        for address, label in sorted(rows):
            writer.writerow([address, label])
    return out
