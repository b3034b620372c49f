"""Disassembler oracle tests: known decodings, totality, round trips."""
from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from chainrep.disasm import (
    CATEGORY_NAMES,
    DEFAULT_SCHEME,
    DisassemblyError,
    Instruction,
    OPCODES,
    disassemble,
    lookup,
    reassemble,
    simplify,
)


def test_known_program_decodes_exactly():
    # PUSH1 0x01, PUSH1 0x02, ADD, STOP
    ins = disassemble("0x600160020100")
    assert [i.mnemonic for i in ins] == ["PUSH1", "PUSH1", "ADD", "STOP"]
    assert [i.offset for i in ins] == [0, 2, 4, 5]
    assert ins[0].immediate == b"\x01"
    assert ins[1].immediate == b"\x02"
    assert ins[2].immediate == b""
    assert not any(i.truncated for i in ins)


@pytest.mark.parametrize("code", ["", "0x", b""])
def test_empty_bytecode(code):
    assert disassemble(code) == []


def test_truncated_push_zero_pads_and_flags():
    ins = disassemble("0x61ff")
    assert len(ins) == 1
    assert ins[0].mnemonic == "PUSH2"
    assert ins[0].immediate == b"\xff\x00"
    assert ins[0].truncated


def test_invalid_opcode_is_named():
    ins = disassemble("0xfe")
    assert ins[0].mnemonic == "INVALID"
    assert DEFAULT_SCHEME.names[DEFAULT_SCHEME.category_of(0xFE)] == "Invalid"


def test_unassigned_byte_decodes_as_unknown():
    ins = disassemble("0x0c")
    assert ins[0].mnemonic == "UNKNOWN_0x0C"
    assert DEFAULT_SCHEME.names[DEFAULT_SCHEME.category_of(0x0C)] == "Invalid"


def test_decoding_is_total_over_all_byte_values():
    for byte in range(256):
        ins = disassemble(bytes([byte]))
        assert len(ins) == 1
        assert ins[0].byte_value == byte
        assert ins[0].mnemonic == lookup(byte)
        assert 0 <= DEFAULT_SCHEME.category_of(byte) < len(CATEGORY_NAMES)


def test_category_spot_checks():
    names = DEFAULT_SCHEME.names
    cat = lambda b: names[DEFAULT_SCHEME.category_of(b)]
    assert cat(0x01) == "Arithmetic"  # ADD
    assert cat(0x14) == "ComparisonLogic"  # EQ
    assert cat(0x20) == "Crypto"  # KECCAK256
    assert cat(0x33) == "Environment"  # CALLER
    assert cat(0x43) == "Block"  # NUMBER
    assert cat(0x50) == "StackPop"  # POP
    assert cat(0x5F) == "StackPop"  # PUSH0
    assert cat(0x52) == "Memory"  # MSTORE
    assert cat(0x55) == "Storage"  # SSTORE
    assert cat(0x57) == "Flow"  # JUMPI
    assert cat(0x7F) == "Push"  # PUSH32
    assert cat(0x8F) == "Dup"  # DUP16
    assert cat(0x9F) == "Swap"  # SWAP16
    assert cat(0xA4) == "Log"  # LOG4
    assert cat(0xFF) == "System"  # SELFDESTRUCT
    assert cat(0x00) == "Invalid"  # STOP carries no signal here
    assert cat(0xFB) == "Invalid"  # unassigned


def test_scheme_is_a_partition():
    # Every byte maps to exactly one of the 15 categories.
    assert DEFAULT_SCHEME.size == 15
    assert len(DEFAULT_SCHEME.byte_to_category) == 256
    seen = set(DEFAULT_SCHEME.byte_to_category)
    assert seen <= set(range(15))


@pytest.mark.parametrize(
    "code, fragment",
    [("0x6001f", "odd-length"), ("0x60zz", "non-hex")],
)
def test_malformed_hex_raises_with_offset(code, fragment):
    with pytest.raises(DisassemblyError) as err:
        disassemble(code)
    assert fragment in str(err.value)
    assert err.value.offset is not None


def test_push_immediates_consume_payload():
    # PUSH32 swallows the following 32 bytes even if they look like opcodes.
    code = bytes([0x7F]) + bytes(range(32)) + bytes([0x01])
    ins = disassemble(code)
    assert [i.mnemonic for i in ins] == ["PUSH32", "ADD"]
    assert ins[0].immediate == bytes(range(32))
    assert ins[1].offset == 33


def test_reassemble_inverts_disassemble():
    code = bytes.fromhex("600160020100fe610bb8")
    assert reassemble(disassemble(code)) == code


def test_simplify_preserves_length_and_order():
    ins = disassemble("0x600160020100")
    seq = simplify(ins, address="0xabc")
    assert seq.address == "0xabc"
    assert len(seq.category_ids) == len(ins)
    names = [DEFAULT_SCHEME.names[c] for c in seq.category_ids]
    assert names == ["Push", "Push", "Arithmetic", "Invalid"]


@given(st.binary(max_size=256))
def test_random_bytecode_round_trips(raw):
    ins = disassemble(raw)
    out = reassemble(ins)
    if ins and ins[-1].truncated:
        # zero padding extends the tail, everything before it must match
        assert out.startswith(raw)
        assert set(out[len(raw):]) <= {0}
    else:
        assert out == raw
    # decoding the reassembly is a fixed point
    assert disassemble(out) == [
        Instruction(i.offset, i.byte_value, i.mnemonic, i.immediate, False) for i in ins
    ]


@given(st.binary(max_size=128))
def test_offsets_partition_the_code(raw):
    ins = disassemble(raw)
    expected = 0
    for i in ins:
        assert i.offset == expected
        expected += 1 + len(i.immediate) if not i.truncated else len(raw) - i.offset
    if not (ins and ins[-1].truncated):
        assert expected == len(raw)


def test_opcode_table_spot_values():
    assert OPCODES[0x60] == "PUSH1"
    assert OPCODES[0x7F] == "PUSH32"
    assert OPCODES[0x80] == "DUP1"
    assert OPCODES[0xA0] == "LOG0"
    assert OPCODES[0x44] == "PREVRANDAO"
