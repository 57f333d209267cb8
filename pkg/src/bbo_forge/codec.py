"""Trajectory <-> text codec: quantization, the trial grammar, and augmentations.

One encoded record looks like

    <algorithm>:RS
    <type>:<UNI>,<min_value>:0.001,<max_value>:10.0,<log-scale>&
    <type>:<CATEGORICAL>,<categories>:[0, 1, 2]
    417,<2>*0|905,<0>*999|

line 1 names the optimizer, the following lines describe the search space in
canonical order (numerical parameters first), and the final line streams the
trials. Within a trial, numerical values are unit-scaled by the search-space
bounds and quantized to integers in [0, Q-1]; categorical values appear as
`<i>`. `*` separates the configuration from its objective token and `|` closes
the trial. Objective tokens are min-max scaled over the trajectory being
encoded, so the best trial always carries token 0.

Numbers never carry leading zeros, which keeps the trial language a DFA: the
grammar in this module accepts exactly the strings the encoder can emit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from . import space as sp
from .runner import Trajectory


@dataclass(frozen=True)
class QuantizationConfig:
    """Number of quantization bins Q; tokens live in [0, Q-1]."""

    q: int = 1000

    def __post_init__(self) -> None:
        if self.q < 2:
            raise ValueError("Q must be >= 2")


DEFAULT_QUANT = QuantizationConfig()


def quantize(u: float, q: int = 1000) -> int:
    """Map u in [0,1] to an integer token in [0, Q-1], rounding half up."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"value {u!r} outside [0, 1]")
    return min(max(int(math.floor(u * (q - 1) + 0.5)), 0), q - 1)


def dequantize(code: int, q: int = 1000) -> float:
    if not 0 <= code <= q - 1:
        raise ValueError(f"token {code!r} outside [0, {q - 1}]")
    return code / (q - 1)


def scale_objectives(ys: Sequence[float]) -> list[float]:
    """Min-max scale to [0,1]; the lower (better) objective maps to 0.
    Constant sequences map to all zeros."""
    if len(ys) == 0:
        raise ValueError("cannot scale an empty objective list")
    lo, hi = min(ys), max(ys)
    if hi == lo:
        return [0.0] * len(ys)
    return [(y - lo) / (hi - lo) for y in ys]


@dataclass(frozen=True)
class EncodedTrajectory:
    text: str
    source: dict

    @property
    def trial_count(self) -> int:
        return self.text.count("|")


def encode_trial_stream(
    space: sp.SearchSpace,
    trials: Sequence[tuple[sp.Configuration, float]],
    quant: QuantizationConfig = DEFAULT_QUANT,
) -> str:
    """Encode trials as the delimited token stream, with objective min-max
    computed over exactly the trials given."""
    order = sp.canonical_order(space)
    scaled = scale_objectives([y for _, y in trials]) if trials else []
    chunks = []
    for (config, _), s in zip(trials, scaled):
        u = sp.to_unit(space, config)
        parts = []
        for i in order:
            if space.parameters[i].is_categorical:
                parts.append(f"<{u[i]}>")
            else:
                parts.append(str(quantize(u[i], quant.q)))
        chunks.append(",".join(parts) + "*" + str(quantize(s, quant.q)) + "|")
    return "".join(chunks)


def encode_prompt(
    space: sp.SearchSpace,
    algorithm: str,
    trials: Sequence[tuple[sp.Configuration, float]],
    quant: QuantizationConfig = DEFAULT_QUANT,
) -> str:
    """Algorithm line + space header + (possibly empty) trial stream."""
    header = f"<algorithm>:{algorithm}\n{sp.encode_space_header(space)}\n"
    return header + encode_trial_stream(space, trials, quant)


def encode_trajectory(
    traj: Trajectory, quant: QuantizationConfig = DEFAULT_QUANT
) -> EncodedTrajectory:
    text = encode_prompt(traj.space, traj.optimizer, traj.trials, quant)
    source = {
        "task_id": traj.task_id,
        "space_id": traj.space_id,
        "optimizer": traj.optimizer,
        "seed": traj.seed,
        "T": traj.T,
    }
    return EncodedTrajectory(text, source)


# ---------------------------------------------------------------------------
# Trial grammar: a byte-level DFA over the trial stream
# ---------------------------------------------------------------------------


class GrammarState(NamedTuple):
    """DFA state: which field the cursor is in, and the digit accumulator.

    acc == -1 means no digit consumed yet; acc == 0 means a bare '0' was
    consumed (numbers carry no leading zeros, so the field is complete).
    """

    phase: str  # boundary | num | cat_open | cat | cat_end | obj
    slot: int
    acc: int


BOUNDARY = GrammarState("boundary", 0, -1)
_DIGITS = frozenset(b"0123456789")


class TrialGrammar:
    """Byte-level automaton accepting exactly the trial streams the encoder
    can emit for one search space: the Kleene star of single-trial strings.

    States are small hashable values; `advance` returns the successor state or
    None for a rejection. `BOUNDARY` is both the start state and the only
    accepting state.
    """

    def __init__(self, space: sp.SearchSpace, q: int = 1000):
        order = sp.canonical_order(space)
        params = [space.parameters[i] for i in order]
        self.q = q
        self.num_count = sum(1 for p in params if not p.is_categorical)
        self.cat_cards = [p.cardinality for p in params if p.is_categorical]
        self.slots = self.num_count + len(self.cat_cards)

    def _limit(self, state: GrammarState) -> int:
        if state.phase == "num" or state.phase == "obj":
            return self.q
        return self.cat_cards[state.slot - self.num_count]

    def _start_trial(self, byte: int) -> GrammarState | None:
        if self.num_count > 0:
            if byte in _DIGITS:
                return self._digit(GrammarState("num", 0, -1), byte)
            return None
        if byte == ord("<"):
            return GrammarState("cat", 0, -1)
        return None

    def _digit(self, state: GrammarState, byte: int) -> GrammarState | None:
        d = byte - ord("0")
        if state.acc == -1:
            nxt = d
        elif state.acc == 0:
            return None  # '0' is already a complete number
        else:
            nxt = state.acc * 10 + d
        if nxt >= self._limit(state):
            return None
        return state._replace(acc=nxt)

    def advance(self, state: GrammarState, byte: int) -> GrammarState | None:
        phase = state.phase
        if phase == "boundary":
            return self._start_trial(byte)

        if phase == "num":
            if byte in _DIGITS:
                return self._digit(state, byte)
            if state.acc == -1:
                return None
            if byte == ord(","):
                if state.slot < self.num_count - 1:
                    return GrammarState("num", state.slot + 1, -1)
                if self.cat_cards:
                    return GrammarState("cat_open", self.num_count, -1)
                return None
            if byte == ord("*") and state.slot == self.num_count - 1 and not self.cat_cards:
                return GrammarState("obj", self.slots, -1)
            return None

        if phase == "cat_open":
            return GrammarState("cat", state.slot, -1) if byte == ord("<") else None

        if phase == "cat":
            if byte in _DIGITS:
                return self._digit(state, byte)
            if byte == ord(">") and state.acc != -1:
                return GrammarState("cat_end", state.slot, state.acc)
            return None

        if phase == "cat_end":
            if byte == ord(",") and state.slot < self.slots - 1:
                return GrammarState("cat_open", state.slot + 1, -1)
            if byte == ord("*") and state.slot == self.slots - 1:
                return GrammarState("obj", self.slots, -1)
            return None

        if phase == "obj":
            if byte in _DIGITS:
                return self._digit(state, byte)
            if byte == ord("|") and state.acc != -1:
                return BOUNDARY
            return None

        raise ValueError(f"corrupt grammar state {state!r}")

    def accepts(self, text: str | bytes) -> bool:
        data = text.encode("utf-8") if isinstance(text, str) else text
        state = BOUNDARY
        for b in data:
            state = self.advance(state, b)
            if state is None:
                return False
        return state == BOUNDARY

    def max_trial_bytes(self) -> int:
        """Upper bound on the byte length of one encoded trial."""
        digits = len(str(self.q - 1))
        num_part = self.num_count * (digits + 1)
        cat_part = sum(len(str(c - 1)) + 3 for c in self.cat_cards)
        return num_part + cat_part + digits + 2


@lru_cache(maxsize=64)
def grammar_for(space: sp.SearchSpace, q: int = 1000) -> TrialGrammar:
    return TrialGrammar(space, q)


def grammar_advance(
    space: sp.SearchSpace,
    quant: QuantizationConfig,
    state: GrammarState,
    byte: int,
) -> GrammarState | None:
    """Single-byte transition; None signals rejection (a value, not an error)."""
    return grammar_for(space, quant.q).advance(state, byte)


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _parse_fields(
    space: sp.SearchSpace, quant: QuantizationConfig, data: bytes, *, stop_at_star: bool
) -> tuple[list[int], int | None]:
    """Run the DFA over one trial, returning field accumulators in canonical
    order plus the objective token (None when stop_at_star)."""
    grammar = grammar_for(space, quant.q)
    state = BOUNDARY
    fields: list[int] = []
    obj: int | None = None
    for offset, b in enumerate(data):
        nxt = grammar.advance(state, b)
        if nxt is None:
            raise ParseError(f"unexpected byte {chr(b)!r}", offset)
        # a digit run is complete exactly when its terminating byte arrives
        if state.phase == "num" and b not in _DIGITS:
            fields.append(state.acc)
        elif state.phase == "cat" and b == ord(">"):
            fields.append(state.acc)
        elif state.phase == "obj" and b == ord("|"):
            obj = state.acc
        state = nxt
        if stop_at_star and state.phase == "obj":
            if len(fields) != grammar.slots:
                raise ParseError("incomplete configuration before '*'", offset)
            return fields, None
    if stop_at_star:
        raise ParseError("trial ended before '*'", len(data))
    if state != BOUNDARY or obj is None:
        raise ParseError("incomplete trial", len(data))
    if len(fields) != grammar.slots:
        raise ParseError("wrong field count", len(data))
    return fields, obj


def _fields_to_config(
    space: sp.SearchSpace, quant: QuantizationConfig, fields: list[int]
) -> sp.Configuration:
    order = sp.canonical_order(space)
    unit = [0.0] * space.dim
    for pos, value in zip(order, fields):
        if space.parameters[pos].is_categorical:
            unit[pos] = int(value)
        else:
            unit[pos] = dequantize(value, quant.q)
    return sp.from_unit(space, unit)


def decode_trial(
    space: sp.SearchSpace, quant: QuantizationConfig, text: str | bytes
) -> tuple[sp.Configuration, float]:
    """Decode one full trial string `...*obj|` into (configuration, scaled objective)."""
    data = text.encode("utf-8") if isinstance(text, str) else text
    fields, obj = _parse_fields(space, quant, data, stop_at_star=False)
    return _fields_to_config(space, quant, fields), dequantize(obj, quant.q)


def decode_config_prefix(
    space: sp.SearchSpace, quant: QuantizationConfig, text: str | bytes
) -> sp.Configuration:
    """Decode the configuration part of a trial that ends at (or beyond) `*`."""
    data = text.encode("utf-8") if isinstance(text, str) else text
    fields, _ = _parse_fields(space, quant, data, stop_at_star=True)
    return _fields_to_config(space, quant, fields)


def decode_trial_stream(
    space: sp.SearchSpace, quant: QuantizationConfig, text: str
) -> list[tuple[sp.Configuration, float]]:
    """Decode a stream of complete trials (the last line of an encoded record)."""
    out = []
    rest = text
    while rest:
        cut = rest.find("|")
        if cut < 0:
            raise ParseError("bytes after the last complete trial", len(text) - len(rest))
        out.append(decode_trial(space, quant, rest[: cut + 1]))
        rest = rest[cut + 1:]
    return out


def split_encoded(text: str) -> tuple[str, str, str]:
    """Split an encoded record into (algorithm name, header block, trial stream)."""
    lines = text.split("\n")
    if not lines[0].startswith("<algorithm>:"):
        raise ValueError("record does not start with an <algorithm> line")
    algorithm = lines[0][len("<algorithm>:"):]
    return algorithm, "\n".join(lines[1:-1]), lines[-1]


# ---------------------------------------------------------------------------
# Augmentations
# ---------------------------------------------------------------------------


def apply_parameter_permutation(
    traj: Trajectory, num_perm: Sequence[int], cat_perm: Sequence[int]
) -> Trajectory:
    """Reorder numerical parameters by num_perm and categorical ones by
    cat_perm, consistently across the space and every trial. The result is
    presented in canonical order (numerical block first)."""
    nums = [i for i, p in enumerate(traj.space.parameters) if not p.is_categorical]
    cats = [i for i, p in enumerate(traj.space.parameters) if p.is_categorical]
    if sorted(num_perm) != list(range(len(nums))) or sorted(cat_perm) != list(range(len(cats))):
        raise ValueError("permutations must cover the numerical and categorical blocks")
    new_positions = [nums[j] for j in num_perm] + [cats[j] for j in cat_perm]
    new_space = sp.SearchSpace(
        traj.space.id, tuple(traj.space.parameters[i] for i in new_positions)
    )
    new_trials = tuple(
        (tuple(config[i] for i in new_positions), y) for config, y in traj.trials
    )
    return Trajectory(traj.task_id, new_space, traj.optimizer, traj.seed, new_trials)


def permute_augment(traj: Trajectory, rng: np.random.Generator) -> Trajectory:
    """One uniformly random within-block parameter permutation."""
    n_num = sum(1 for p in traj.space.parameters if not p.is_categorical)
    n_cat = traj.space.dim - n_num
    return apply_parameter_permutation(
        traj, list(rng.permutation(n_num)), list(rng.permutation(n_cat))
    )


def prefix_augment(traj: Trajectory, t_prime: int) -> Trajectory:
    """The first t_prime trials; objective scaling re-derives from the prefix
    at encode time."""
    if not 1 <= t_prime <= traj.T:
        raise ValueError(f"prefix length {t_prime} outside [1, {traj.T}]")
    return Trajectory(
        traj.task_id, traj.space, traj.optimizer, traj.seed, traj.trials[:t_prime]
    )
