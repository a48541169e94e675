"""Shared helpers for the test suite: share reconstruction, an independent
recursive tree walker, and a bounded random program generator used for
differential testing of the two evaluation backends.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from hsstree.hss import centered


def reveal(hss0, hss1, m0, m1, n: int) -> int:
    """Centered reconstruction of a memory-value pair."""
    s0 = hss0.output(m0, n)
    s1 = hss1.output(m1, n)
    return centered((s1.value - s0.value) % n, n)


def reveal_raw(hss0, hss1, m0, m1, n: int) -> int:
    s0 = hss0.output(m0, n)
    s1 = hss1.output(m1, n)
    return (s1.value - s0.value) % n


def traverse_recursive(tree, x):
    """Independent walker over the linked tree structure (no heap arrays)."""
    from hsstree.tree import KIND_THRESHOLD, LeafNode

    node = tree.root
    while not isinstance(node, LeafNode):
        value = x[node.test.feature - 1]
        if node.test.kind == KIND_THRESHOLD:
            bit = value > node.test.threshold
        else:
            bit = value in node.test.members
        node = node.left if bit else node.right
    return node.label


# -- random straight-line programs -------------------------------------------


@dataclass
class RmsProgram:
    """Instruction list over input ciphertexts and memory registers.

    Instructions:
        ("convert", input_idx)
        ("add" | "sub", reg_a, reg_b)
        ("cmul", const, reg)
        ("mul", input_idx, reg)
    The program's result is the last register written.
    """

    inputs: list[int]
    instructions: list[tuple]


def random_rms_program(
    rng: random.Random, max_gates: int = 50, bound: int = 1 << 28
) -> RmsProgram:
    """Random program whose intermediate values all stay within ``bound``."""
    n_inputs = rng.randrange(1, 6)
    inputs = [rng.randrange(-(1 << 8), 1 << 8) for _ in range(n_inputs)]
    instructions: list[tuple] = [("convert", 0)]
    values = [inputs[0]]
    gates = 1
    budget = rng.randrange(2, max_gates + 1)
    attempts = 0
    while gates < budget and attempts < 200:
        attempts += 1
        op = rng.choice(["add", "sub", "cmul", "mul", "convert"])
        if op == "convert":
            idx = rng.randrange(n_inputs)
            instructions.append(("convert", idx))
            values.append(inputs[idx])
            gates += 1
        elif op in ("add", "sub"):
            a = rng.randrange(len(values))
            b = rng.randrange(len(values))
            result = values[a] + values[b] if op == "add" else values[a] - values[b]
            if abs(result) >= bound:
                continue
            instructions.append((op, a, b))
            values.append(result)
        elif op == "cmul":
            c = rng.randrange(-7, 8)
            reg = rng.randrange(len(values))
            result = c * values[reg]
            if abs(result) >= bound:
                continue
            instructions.append(("cmul", c, reg))
            values.append(result)
        else:
            idx = rng.randrange(n_inputs)
            reg = rng.randrange(len(values))
            result = inputs[idx] * values[reg]
            if abs(result) >= bound:
                continue
            instructions.append(("mul", idx, reg))
            values.append(result)
            gates += 1
    return RmsProgram(inputs=inputs, instructions=instructions)


def eval_rms_plain(program: RmsProgram) -> int:
    regs: list[int] = []
    for instr in program.instructions:
        op = instr[0]
        if op == "convert":
            regs.append(program.inputs[instr[1]])
        elif op == "add":
            regs.append(regs[instr[1]] + regs[instr[2]])
        elif op == "sub":
            regs.append(regs[instr[1]] - regs[instr[2]])
        elif op == "cmul":
            regs.append(instr[1] * regs[instr[2]])
        else:
            regs.append(program.inputs[instr[1]] * regs[instr[2]])
    return regs[-1]


def run_rms(hss, ek, ciphertexts, program: RmsProgram):
    """Execute a program on one server; returns the result memory value."""
    regs = []
    for instr in program.instructions:
        op = instr[0]
        if op == "convert":
            regs.append(hss.convert_input(ek, ciphertexts[instr[1]]))
        elif op == "add":
            regs.append(hss.add_mem(regs[instr[1]], regs[instr[2]]))
        elif op == "sub":
            regs.append(hss.sub_mem(regs[instr[1]], regs[instr[2]]))
        elif op == "cmul":
            regs.append(hss.cmul(instr[1], regs[instr[2]]))
        else:
            regs.append(hss.mul(ciphertexts[instr[1]], regs[instr[2]]))
    return regs[-1]


def run_rms_both(keys, hss0, hss1, client, program: RmsProgram, n: int) -> int:
    cts = [client.input_signed(x) for x in program.inputs]
    m0 = run_rms(hss0, keys.ek0, cts, program)
    m1 = run_rms(hss1, keys.ek1, cts, program)
    return reveal(hss0, hss1, m0, m1, n)
