"""Contract and transaction ingestion.

Two sources produce the same record shape: local fixture directories (one
Etherscan-shaped JSON file per contract plus a labels.csv sidecar) and the
Etherscan HTTP API. Tests and the bundled pipeline run entirely from
fixtures; the client exists for pulling real data.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

__all__ = [
    "Label",
    "TxRecord",
    "ContractRecord",
    "IngestError",
    "load_fixture_dir",
    "load_fixture_file",
    "read_labels",
    "record_to_fixture",
    "canonical_fixture",
    "merge_transactions",
    "EtherscanClient",
    "EtherscanError",
]


class IngestError(ValueError):
    pass


class Label(str, enum.Enum):
    REPUTABLE = "reputable"
    ILLICIT = "illicit"
    UNLABELLED = "unlabelled"


@dataclass(frozen=True)
class TxRecord:
    block_number: int
    timestamp: int
    from_addr: str
    to_addr: str
    value: int
    gas_used: int
    gas_price: int
    is_error: bool
    is_internal: bool


@dataclass
class ContractRecord:
    address: str
    bytecode: str
    label: Label = Label.UNLABELLED
    transactions: list[TxRecord] = field(default_factory=list)
    internal_transactions: list[TxRecord] = field(default_factory=list)


def _to_int(raw, default: int = 0) -> int:
    if raw in (None, ""):
        return default
    return int(raw)


def _parse_tx(d: dict, internal: bool) -> TxRecord:
    return TxRecord(
        block_number=_to_int(d.get("blockNumber")),
        timestamp=_to_int(d.get("timeStamp")),
        from_addr=str(d.get("from", "")).lower(),
        to_addr=str(d.get("to", "")).lower(),
        value=_to_int(d.get("value")),
        gas_used=_to_int(d.get("gasUsed")),
        gas_price=_to_int(d.get("gasPrice")),
        is_error=str(d.get("isError", "0")) == "1",
        is_internal=internal,
    )


def _tx_to_dict(tx: TxRecord) -> dict:
    d = {
        "blockNumber": str(tx.block_number),
        "timeStamp": str(tx.timestamp),
        "from": tx.from_addr,
        "to": tx.to_addr,
        "value": str(tx.value),
        "gasUsed": str(tx.gas_used),
        "isError": "1" if tx.is_error else "0",
    }
    if not tx.is_internal:
        d["gasPrice"] = str(tx.gas_price)
    return d


def _normalise_bytecode(raw: str) -> str:
    text = raw.strip().lower()
    if text.startswith("0x"):
        text = text[2:]
    return "0x" + text


def load_fixture_file(path: str | Path) -> ContractRecord:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: malformed JSON ({exc})") from None
    for key in ("address", "bytecode"):
        if key not in payload:
            raise IngestError(f"{path}: missing required field {key!r}")
    return ContractRecord(
        address=str(payload["address"]).lower(),
        bytecode=_normalise_bytecode(str(payload["bytecode"])),
        transactions=[_parse_tx(t, internal=False) for t in payload.get("txlist", [])],
        internal_transactions=[
            _parse_tx(t, internal=True) for t in payload.get("txlistinternal", [])
        ],
    )


def record_to_fixture(record: ContractRecord) -> dict:
    """Serialise back to the fixture shape (canonical form, string numbers)."""
    return {
        "address": record.address.lower(),
        "bytecode": _normalise_bytecode(record.bytecode),
        "txlist": [_tx_to_dict(t) for t in record.transactions],
        "txlistinternal": [_tx_to_dict(t) for t in record.internal_transactions],
    }


def canonical_fixture(payload: dict) -> dict:
    """The canonical form of a raw fixture dict: lowercased address and
    bytecode, integer-normalised numeric strings, fixed key order."""
    record = ContractRecord(
        address=str(payload["address"]).lower(),
        bytecode=_normalise_bytecode(str(payload["bytecode"])),
        transactions=[_parse_tx(t, internal=False) for t in payload.get("txlist", [])],
        internal_transactions=[
            _parse_tx(t, internal=True) for t in payload.get("txlistinternal", [])
        ],
    )
    return record_to_fixture(record)


def read_labels(path: str | Path) -> dict[str, Label]:
    """labels.csv sidecar: header address,label; unknown label values raise."""
    labels: dict[str, Label] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            address = row["address"].strip().lower()
            raw = row["label"].strip().lower()
            try:
                label = Label(raw)
            except ValueError:
                raise IngestError(f"{path}: unknown label {raw!r} for {address}") from None
            if address in labels:
                raise IngestError(f"{path}: duplicate label row for {address}")
            labels[address] = label
    return labels


def load_fixture_dir(path: str | Path) -> list[ContractRecord]:
    """Load every contract JSON under a fixture directory.

    Labels come from the labels.csv sidecar; contracts without a label row
    are kept as UNLABELLED with a warning. Duplicate addresses are an error.
    Returns records sorted by address.
    """
    root = Path(path)
    if not root.is_dir():
        raise IngestError(f"fixture directory not found: {root}")
    labels_path = root / "labels.csv"
    labels = read_labels(labels_path) if labels_path.exists() else {}

    records: dict[str, ContractRecord] = {}
    for file in sorted(root.glob("*.json")):
        record = load_fixture_file(file)
        if record.address in records:
            raise IngestError(f"duplicate contract address {record.address} (file {file.name})")
        if record.address in labels:
            record.label = labels[record.address]
        else:
            logger.warning("no label for %s, marking unlabelled", record.address)
        records[record.address] = record
    return [records[a] for a in sorted(records)]


def merge_transactions(record: ContractRecord) -> list[TxRecord]:
    """Normal and internal transactions in one stream, sorted by
    (timestamp, block_number). The sort is stable, so same-key records keep
    their source order (normal before internal)."""
    merged = list(record.transactions) + list(record.internal_transactions)
    merged.sort(key=lambda t: (t.timestamp, t.block_number))
    return merged


class EtherscanError(RuntimeError):
    def __init__(self, message: str, endpoint: str | None = None):
        super().__init__(message)
        self.endpoint = endpoint


class EtherscanClient:
    """Minimal Etherscan API client with rate limiting and retries.

    ``transport`` is a callable(params_dict) -> response_dict so tests can
    inject a fake; the default builds one from requests. At most
    ``rate_limit`` calls per second are issued; failures are retried up to
    ``max_retries`` times with exponential backoff.
    """

    def __init__(
        self,
        api_key: str = "",
        base_url: str = "https://api.etherscan.io/api",
        rate_limit: float = 5.0,
        max_retries: int = 3,
        backoff_base: float = 1.0,
        transport=None,
        sleep=time.sleep,
        clock=time.monotonic,
    ):
        self.api_key = api_key
        self.base_url = base_url
        self.rate_limit = rate_limit
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._transport = transport or self._requests_transport
        self._sleep = sleep
        self._clock = clock
        self._last_call = -1e9

    def _requests_transport(self, params: dict) -> dict:  # pragma: no cover - network
        import requests

        resp = requests.get(self.base_url, params=params, timeout=30)
        resp.raise_for_status()
        try:
            return resp.json()
        except ValueError as exc:
            raise EtherscanError(
                f"malformed JSON from {params.get('module')}/{params.get('action')}: {exc}",
                endpoint=f"{params.get('module')}/{params.get('action')}",
            ) from None

    def _throttle(self) -> None:
        min_gap = 1.0 / self.rate_limit
        now = self._clock()
        wait = self._last_call + min_gap - now
        if wait > 0:
            self._sleep(wait)
        self._last_call = self._clock()

    def _call(self, **params) -> dict:
        params.setdefault("apikey", self.api_key)
        endpoint = f"{params.get('module')}/{params.get('action')}"
        last_exc: Exception | None = None
        for attempt in range(self.max_retries):
            self._throttle()
            try:
                payload = self._transport(dict(params))
                if not isinstance(payload, dict):
                    raise EtherscanError(f"malformed response from {endpoint}", endpoint)
                return payload
            except EtherscanError:
                raise
            except Exception as exc:
                last_exc = exc
                delay = self.backoff_base * (2**attempt)
                logger.warning("%s failed (attempt %d): %s", endpoint, attempt + 1, exc)
                if attempt + 1 < self.max_retries:
                    self._sleep(delay)
        raise EtherscanError(
            f"{endpoint} failed after {self.max_retries} attempts: {last_exc}", endpoint
        )

    def _tx_action(self, address: str, action: str) -> list[dict]:
        payload = self._call(
            module="account", action=action, address=address, sort="asc"
        )
        status = str(payload.get("status", ""))
        message = str(payload.get("message", ""))
        result = payload.get("result")
        if status == "0":
            if "no transactions found" in message.lower() or result in ([], None):
                return []
            raise EtherscanError(f"account/{action}: {message or result}", f"account/{action}")
        if not isinstance(result, list):
            raise EtherscanError(f"account/{action}: unexpected result shape", f"account/{action}")
        return result

    def fetch_bytecode(self, address: str) -> str:
        # getsourcecode does not return runtime bytecode, so it is fetched
        # through the proxy module instead.
        payload = self._call(module="proxy", action="eth_getCode", address=address, tag="latest")
        result = payload.get("result")
        if not isinstance(result, str):
            raise EtherscanError("proxy/eth_getCode: unexpected result shape", "proxy/eth_getCode")
        return _normalise_bytecode(result)

    def fetch_source_metadata(self, address: str) -> dict:
        payload = self._call(module="contract", action="getsourcecode", address=address)
        result = payload.get("result")
        if isinstance(result, list) and result:
            return result[0]
        raise EtherscanError(
            "contract/getsourcecode: unexpected result shape", "contract/getsourcecode"
        )

    def fetch_contract(self, address: str, label: Label = Label.UNLABELLED) -> ContractRecord:
        address = address.lower()
        return ContractRecord(
            address=address,
            bytecode=self.fetch_bytecode(address),
            label=label,
            transactions=[
                _parse_tx(t, internal=False)
                for t in self._tx_action(address, "txlist")
            ],
            internal_transactions=[
                _parse_tx(t, internal=True)
                for t in self._tx_action(address, "txlistinternal")
            ],
        )
