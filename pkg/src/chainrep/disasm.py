"""EVM bytecode disassembly and opcode-category simplification."""
from __future__ import annotations

from dataclasses import dataclass, field

__all__ = [
    "Instruction",
    "CategoryScheme",
    "CategorySequence",
    "DisassemblyError",
    "OPCODES",
    "CATEGORY_NAMES",
    "DEFAULT_SCHEME",
    "disassemble",
    "reassemble",
    "simplify",
    "lookup",
]


class DisassemblyError(ValueError):
    """Raised when a hex string cannot be decoded into bytecode."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


def _push_immediate_size(byte: int) -> int:
    if 0x60 <= byte <= 0x7F:
        return byte - 0x5F
    return 0


# value -> mnemonic for the named instruction set. PUSH/DUP/SWAP/LOG ranges are
# generated; anything absent decodes as UNKNOWN_0xNN and categorises as Invalid.
OPCODES: dict[int, str] = {
    0x00: "STOP",
    0x01: "ADD",
    0x02: "MUL",
    0x03: "SUB",
    0x04: "DIV",
    0x05: "SDIV",
    0x06: "MOD",
    0x07: "SMOD",
    0x08: "ADDMOD",
    0x09: "MULMOD",
    0x0A: "EXP",
    0x0B: "SIGNEXTEND",
    0x10: "LT",
    0x11: "GT",
    0x12: "SLT",
    0x13: "SGT",
    0x14: "EQ",
    0x15: "ISZERO",
    0x16: "AND",
    0x17: "OR",
    0x18: "XOR",
    0x19: "NOT",
    0x1A: "BYTE",
    0x1B: "SHL",
    0x1C: "SHR",
    0x1D: "SAR",
    0x20: "KECCAK256",
    0x30: "ADDRESS",
    0x31: "BALANCE",
    0x32: "ORIGIN",
    0x33: "CALLER",
    0x34: "CALLVALUE",
    0x35: "CALLDATALOAD",
    0x36: "CALLDATASIZE",
    0x37: "CALLDATACOPY",
    0x38: "CODESIZE",
    0x39: "CODECOPY",
    0x3A: "GASPRICE",
    0x3B: "EXTCODESIZE",
    0x3C: "EXTCODECOPY",
    0x3D: "RETURNDATASIZE",
    0x3E: "RETURNDATACOPY",
    0x3F: "EXTCODEHASH",
    0x40: "BLOCKHASH",
    0x41: "COINBASE",
    0x42: "TIMESTAMP",
    0x43: "NUMBER",
    0x44: "PREVRANDAO",
    0x45: "GASLIMIT",
    0x46: "CHAINID",
    0x47: "SELFBALANCE",
    0x48: "BASEFEE",
    0x50: "POP",
    0x51: "MLOAD",
    0x52: "MSTORE",
    0x53: "MSTORE8",
    0x54: "SLOAD",
    0x55: "SSTORE",
    0x56: "JUMP",
    0x57: "JUMPI",
    0x58: "PC",
    0x59: "MSIZE",
    0x5A: "GAS",
    0x5B: "JUMPDEST",
    0x5F: "PUSH0",
    **{0x60 + i: f"PUSH{i + 1}" for i in range(32)},
    **{0x80 + i: f"DUP{i + 1}" for i in range(16)},
    **{0x90 + i: f"SWAP{i + 1}" for i in range(16)},
    **{0xA0 + i: f"LOG{i}" for i in range(5)},
    0xF0: "CREATE",
    0xF1: "CALL",
    0xF2: "CALLCODE",
    0xF3: "RETURN",
    0xF4: "DELEGATECALL",
    0xF5: "CREATE2",
    0xFA: "STATICCALL",
    0xFD: "REVERT",
    0xFE: "INVALID",
    0xFF: "SELFDESTRUCT",
}

CATEGORY_NAMES: tuple[str, ...] = (
    "Arithmetic",
    "ComparisonLogic",
    "Crypto",
    "Environment",
    "Block",
    "StackPop",
    "Memory",
    "Storage",
    "Flow",
    "Push",
    "Dup",
    "Swap",
    "Log",
    "System",
    "Invalid",
)

_CATEGORY_RANGES: dict[str, list[int]] = {
    "Arithmetic": list(range(0x01, 0x0C)),
    "ComparisonLogic": list(range(0x10, 0x1E)),
    "Crypto": [0x20],
    "Environment": list(range(0x30, 0x40)),
    "Block": list(range(0x40, 0x49)),
    "StackPop": [0x50, 0x5F],
    "Memory": [0x51, 0x52, 0x53, 0x59],
    "Storage": [0x54, 0x55],
    "Flow": [0x56, 0x57, 0x58, 0x5A, 0x5B],
    "Push": list(range(0x60, 0x80)),
    "Dup": list(range(0x80, 0x90)),
    "Swap": list(range(0x90, 0xA0)),
    "Log": list(range(0xA0, 0xA5)),
    "System": [0xF0, 0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xFA, 0xFD, 0xFF],
}


@dataclass(frozen=True)
class CategoryScheme:
    """A total mapping from byte values to category ids.

    Every byte value not claimed by a named category falls into the final
    catch-all category (``Invalid`` in the default scheme), so the mapping is
    total over 0..255 by construction.
    """

    names: tuple[str, ...]
    byte_to_category: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.names)

    def category_of(self, byte: int) -> int:
        return self.byte_to_category[byte]


def _build_default_scheme() -> CategoryScheme:
    invalid_id = CATEGORY_NAMES.index("Invalid")
    table = [invalid_id] * 256
    for name, values in _CATEGORY_RANGES.items():
        cat = CATEGORY_NAMES.index(name)
        for value in values:
            table[value] = cat
    return CategoryScheme(names=CATEGORY_NAMES, byte_to_category=tuple(table))


DEFAULT_SCHEME = _build_default_scheme()


@dataclass(frozen=True)
class Instruction:
    offset: int
    byte_value: int
    mnemonic: str
    immediate: bytes = b""
    truncated: bool = False

    def __str__(self) -> str:
        if self.immediate:
            return f"{self.mnemonic} 0x{self.immediate.hex()}"
        return self.mnemonic


@dataclass(frozen=True)
class CategorySequence:
    address: str
    category_ids: tuple[int, ...]
    scheme: CategoryScheme = field(default=DEFAULT_SCHEME, compare=False)


def lookup(byte: int) -> str:
    """Mnemonic for a byte value; unassigned values get an UNKNOWN name."""
    try:
        return OPCODES[byte]
    except KeyError:
        return f"UNKNOWN_0x{byte:02X}"


def _decode_hex(code: str | bytes) -> bytes:
    if isinstance(code, (bytes, bytearray)):
        return bytes(code)
    text = code.strip()
    if text.startswith(("0x", "0X")):
        text = text[2:]
    if len(text) % 2 != 0:
        raise DisassemblyError(
            f"odd-length hex string ({len(text)} digits)", offset=len(text) // 2
        )
    try:
        return bytes.fromhex(text)
    except ValueError:
        for i, ch in enumerate(text):
            if ch not in "0123456789abcdefABCDEF":
                raise DisassemblyError(
                    f"non-hex character {ch!r} at byte offset {i // 2}", offset=i // 2
                ) from None
        raise


def disassemble(code: str | bytes) -> list[Instruction]:
    """Decode hex or raw bytecode into an instruction list.

    PUSH immediates cut short by end of code are zero padded on the right and
    flagged via ``truncated``. Decoding is total: every byte value produces an
    instruction.
    """
    raw = _decode_hex(code)
    out: list[Instruction] = []
    i = 0
    n = len(raw)
    while i < n:
        byte = raw[i]
        width = _push_immediate_size(byte)
        if width == 0:
            out.append(Instruction(offset=i, byte_value=byte, mnemonic=lookup(byte)))
            i += 1
            continue
        chunk = raw[i + 1 : i + 1 + width]
        truncated = len(chunk) < width
        if truncated:
            chunk = chunk + b"\x00" * (width - len(chunk))
        out.append(
            Instruction(
                offset=i,
                byte_value=byte,
                mnemonic=lookup(byte),
                immediate=chunk,
                truncated=truncated,
            )
        )
        i += 1 + width
    return out


def reassemble(instructions: list[Instruction]) -> bytes:
    """Inverse of :func:`disassemble` up to the zero padding of truncated tails."""
    return b"".join(bytes([ins.byte_value]) + ins.immediate for ins in instructions)


def simplify(
    instructions: list[Instruction],
    scheme: CategoryScheme = DEFAULT_SCHEME,
    address: str = "",
) -> CategorySequence:
    """Collapse instructions to their category ids, preserving order and length."""
    ids = tuple(scheme.category_of(ins.byte_value) for ins in instructions)
    return CategorySequence(address=address, category_ids=ids, scheme=scheme)
