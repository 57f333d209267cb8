"""Grammar-constrained sampling from a trained checkpoint, and the closed loop
that runs the model as a black-box optimizer.

At every sampling step, tokens whose byte expansion would drive the trial
grammar into rejection are masked to probability zero; the survivors keep
their relative probabilities (renormalization only). A trial ends at `*`: the
objective token is never taken from the model, the environment's observed
value is written back when the history is re-encoded for the next trial.

Histories are re-encoded from scratch every step because objective tokens are
min-max scaled over the observations so far; when the prompt outgrows the
model context, the oldest trials are dropped (the header always stays) and
scaling derives from the kept window.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import codec
from . import space as sp
from .bench import BenchmarkTask
from .model import DecoderModel, KVCache, ModelCheckpoint
from .runner import Trajectory
from .tok import Tokenizer


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 1.0
    max_trial_bytes: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class History:
    """Prompt ingredients: optimizer name, space, and raw observed trials."""

    algorithm: str
    space: sp.SearchSpace
    trials: list[tuple[sp.Configuration, float]] = field(default_factory=list)

    def prompt_text(self, quant: codec.QuantizationConfig = codec.DEFAULT_QUANT) -> str:
        return codec.encode_prompt(self.space, self.algorithm, self.trials, quant)


class TokenMasker:
    """Per-grammar-state admissibility of every vocabulary token.

    A token is admissible if walking its byte expansion through the grammar
    never rejects. Masks are derived directly from the byte automaton and
    cached per state; the end-of-sequence token is never admissible inside a
    trial. At construction every token is walked once from the trial start as
    an exhaustive agreement check between expansions and the automaton.
    """

    def __init__(self, tokenizer: Tokenizer, grammar: codec.TrialGrammar):
        self.grammar = grammar
        self.n_tokens = tokenizer.vocab_size + 1  # trailing id is end-of-sequence
        self.expansions = [tokenizer.token_bytes(i) for i in range(tokenizer.vocab_size)]
        self._masks: dict[codec.GrammarState, np.ndarray] = {}
        for expansion in self.expansions:
            self._walk(codec.BOUNDARY, expansion)  # must never raise

    def _walk(self, state: codec.GrammarState, expansion: bytes):
        for b in expansion:
            state = self.grammar.advance(state, b)
            if state is None:
                return None
        return state

    def allowed(self, state: codec.GrammarState) -> np.ndarray:
        mask = self._masks.get(state)
        if mask is None:
            mask = np.zeros(self.n_tokens, dtype=bool)
            for tid, expansion in enumerate(self.expansions):
                if expansion and self._walk(state, expansion) is not None:
                    mask[tid] = True
            self._masks[state] = mask
        return mask

    def advance(self, state: codec.GrammarState, token_id: int) -> codec.GrammarState:
        nxt = self._walk(state, self.expansions[token_id])
        if nxt is None:
            raise RuntimeError(f"token {token_id} was sampled but is not admissible")
        return nxt


def _last_logits(model: DecoderModel, ids: list[int], cache: KVCache) -> torch.Tensor:
    tokens = torch.tensor(ids, dtype=torch.long)
    with torch.no_grad():
        return model(tokens, cache=cache)[-1]


def masked_probs(logits: np.ndarray, mask: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature softmax with inadmissible tokens zeroed; survivors keep
    their relative probabilities (pure renormalization, no re-ranking)."""
    z = np.asarray(logits, dtype=np.float64) / temperature
    z[~mask] = -np.inf
    z -= z.max()
    probs = np.exp(z)
    return probs / probs.sum()


def sample_trial_tokens(
    model: DecoderModel,
    masker: TokenMasker,
    prompt_cache: KVCache,
    first_logits: torch.Tensor,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> tuple[str, list[int]]:
    """Sample one trial continuation, stopping at the first emitted `*`.

    Returns the trial string truncated just past `*` plus the raw token ids.
    The caller provides the prompt's KV cache and the logits at its last
    position."""
    state = codec.BOUNDARY
    emitted = bytearray()
    ids: list[int] = []
    logits = first_logits
    while len(emitted) <= cfg.max_trial_bytes:
        mask = masker.allowed(state)
        if not mask.any():
            raise RuntimeError("every token is masked: tokenizer/grammar mismatch")
        probs = masked_probs(logits.to(torch.float64).numpy(), mask, cfg.temperature)
        token_id = int(rng.choice(len(probs), p=probs))
        ids.append(token_id)
        expansion = masker.expansions[token_id]
        emitted.extend(expansion)
        state = masker.advance(state, token_id)
        if b"*" in expansion:
            text = bytes(emitted)
            return text[: text.index(b"*") + 1].decode("utf-8"), ids
        logits = _last_logits(model, [token_id], prompt_cache)
    raise RuntimeError(f"trial exceeded {cfg.max_trial_bytes} bytes before '*'")


def constrained_sample_trial(
    model: DecoderModel,
    tokenizer: Tokenizer,
    space: sp.SearchSpace,
    history: History,
    cfg: SamplerConfig,
    quant: codec.QuantizationConfig = codec.DEFAULT_QUANT,
) -> str:
    """One-shot convenience wrapper: encode the history, prefill, sample one
    trial string up to and including `*`."""
    grammar = codec.grammar_for(space, quant.q)
    masker = TokenMasker(tokenizer, grammar)
    rng = np.random.default_rng(cfg.seed)
    ids = tokenizer.tokenize(history.prompt_text(quant))
    cache = KVCache(model.cfg.n_layers)
    logits = _last_logits(model, ids, cache)
    text, _ = sample_trial_tokens(model, masker, cache, logits, cfg, rng)
    return text


def sample_trials_from_prompt(
    model: DecoderModel,
    tokenizer: Tokenizer,
    space: sp.SearchSpace,
    prompt_text: str,
    n: int,
    cfg: SamplerConfig,
    quant: codec.QuantizationConfig = codec.DEFAULT_QUANT,
) -> list[sp.Configuration]:
    """Draw n independent configurations conditioned on one fixed prompt.

    The prompt is prefilled once; each draw works on a cloned cache."""
    grammar = codec.grammar_for(space, quant.q)
    masker = TokenMasker(tokenizer, grammar)
    rng = np.random.default_rng(cfg.seed)
    base_cache = KVCache(model.cfg.n_layers)
    ids = tokenizer.tokenize(prompt_text)
    base_logits = _last_logits(model, ids, base_cache)
    out = []
    for _ in range(n):
        cache = base_cache.clone()
        text, _ = sample_trial_tokens(model, masker, cache, base_logits, cfg, rng)
        out.append(codec.decode_config_prefix(space, quant, text))
    return out


class ModelOptimizer:
    """Ask/tell adapter over a checkpoint: suggestions come from constrained
    sampling, observations extend the encoded history."""

    def __init__(
        self,
        checkpoint: ModelCheckpoint,
        tokenizer: Tokenizer,
        space: sp.SearchSpace,
        algorithm: str,
        seed: int = 0,
        sampler: SamplerConfig | None = None,
        quant: codec.QuantizationConfig = codec.DEFAULT_QUANT,
    ):
        self.model = checkpoint.to_model()
        self.checkpoint_id = checkpoint.checkpoint_id
        self.tokenizer = tokenizer
        self.space = space
        self.quant = quant
        self.history = History(algorithm, space)
        base = sampler or SamplerConfig()
        self.sampler = SamplerConfig(base.temperature, base.max_trial_bytes, seed)
        self.rng = np.random.default_rng(seed)
        self.grammar = codec.grammar_for(space, quant.q)
        self.masker = TokenMasker(tokenizer, self.grammar)
        self._window_start = 0
        self._prev_ids: list[int] = []
        self._cache = KVCache(self.model.cfg.n_layers)
        # worst-case trial bytes is also a bound on its token count
        self._budget = self.model.cfg.context_length - self.grammar.max_trial_bytes() - 1
        if self._budget <= 0:
            raise ValueError("model context cannot hold even one trial for this space")

    def _prompt_ids(self) -> list[int]:
        while True:
            kept = self.history.trials[self._window_start :]
            text = codec.encode_prompt(self.space, self.history.algorithm, kept, self.quant)
            ids = self.tokenizer.tokenize(text)
            if len(ids) <= self._budget or self._window_start >= len(self.history.trials):
                return ids
            self._window_start += 1  # drop the oldest trial, keep the header

    def suggest(self) -> sp.Configuration:
        ids = self._prompt_ids()
        # reuse cached positions for the shared prompt prefix; always recompute
        # at least the final position to read its logits
        common = 0
        limit = min(len(ids) - 1, len(self._prev_ids))
        while common < limit and ids[common] == self._prev_ids[common]:
            common += 1
        self._cache.truncate(common)
        logits = _last_logits(self.model, ids[common:], self._cache)
        self._prev_ids = list(ids)
        text, _ = sample_trial_tokens(
            self.model, self.masker, self._cache, logits, self.sampler, self.rng
        )
        # the cache now holds prompt + sampled tokens; roll back to the prompt
        self._cache.truncate(len(ids))
        return codec.decode_config_prefix(self.space, self.quant, text)

    def observe(self, config: sp.Configuration, y: float) -> None:
        self.space.validate(config)
        self.history.trials.append((config, float(y)))


def optimize_with_model(
    checkpoint: ModelCheckpoint,
    tokenizer: Tokenizer,
    task: BenchmarkTask,
    algorithm: str,
    T: int,
    seed: int,
    sampler: SamplerConfig | None = None,
    quant: codec.QuantizationConfig = codec.DEFAULT_QUANT,
) -> Trajectory:
    """Closed loop: sample a configuration, evaluate the true oracle, append,
    re-encode. Model-emitted objective tokens are never trusted."""
    if T < 1:
        raise ValueError("budget T must be >= 1")
    optimizer = ModelOptimizer(checkpoint, tokenizer, task.space, algorithm, seed, sampler, quant)
    trials = []
    for t in range(T):
        try:
            config = optimizer.suggest()
            y = task.evaluate(config)
        except RuntimeError as e:
            raise RuntimeError(f"model optimization failed at trial {t + 1}: {e}") from e
        optimizer.observe(config, y)
        trials.append((config, y))
    label = f"model:{algorithm}@{optimizer.checkpoint_id}"
    return Trajectory(task.id, task.space, label, seed, tuple(trials))
