import math
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from utils.autodiff import Adam, NoamSchedule, backward, no_grad
from utils.data_types.config_types import ExperimentConfig
from utils.data_types.vocabulary import EOS, SOS, Vocabulary
from utils.errors import DataError, NumericError
from utils.logging import LoggedClass, format_metrics
from utils.losses import attention_loss
from utils.nn.lm import CharLM
from .checkpoint import dropout_generators, generator_states, model_checkpoint, save_checkpoint


def lm_batch(texts: Sequence[str], vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forced LM inputs (`<sos>` + text) and targets (text + `<eos>`, -1 padded)."""
    encoded = [vocab.encode(t) for t in texts]
    longest = max(len(e) for e in encoded) + 1
    inputs = np.full((len(texts), longest), EOS, dtype=np.int64)
    targets = np.full((len(texts), longest), -1, dtype=np.int64)
    for i, ids in enumerate(encoded):
        inputs[i, : len(ids) + 1] = [SOS] + ids
        targets[i, : len(ids) + 1] = [Vocabulary.to_output(t) for t in ids + [EOS]]
    return inputs, targets


def lm_perplexity(lm: CharLM, vocab: Vocabulary, texts: Sequence[str], batch_size: int = 32) -> float:
    """Per-token perplexity of `texts`, end-of-sentence included."""
    lm.eval()
    nll, tokens = 0.0, 0
    with no_grad():
        for start in range(0, len(texts), batch_size):
            chunk = texts[start : start + batch_size]
            inputs, targets = lm_batch(chunk, vocab)
            nll += attention_loss(lm(inputs), targets).item() * len(chunk)
            tokens += int((targets >= 0).sum())
    return math.exp(nll / max(tokens, 1))


class LmTrainer(LoggedClass):
    """Next-character cross-entropy training of the fusion LM."""

    def __init__(self, cfg: ExperimentConfig, vocab: Vocabulary, seed: int = 0) -> None:
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.seed = seed
        self.lm = CharLM(cfg.lm, vocab, np.random.default_rng([seed, 7]))
        self.lm.seed_dropout(seed)
        self.order_rng = np.random.default_rng([seed, 11])
        self.optimizer = Adam(
            self.lm.named_parameters(),
            NoamSchedule(cfg.lm.peak_lr, cfg.lm.warmup_steps),
            beta1=cfg.optimizer.beta1,
            beta2=cfg.optimizer.beta2,
            eps=cfg.optimizer.eps,
        )

    def perplexity(self, texts: Sequence[str]) -> float:
        return lm_perplexity(self.lm, self.vocab, texts, self.cfg.lm.batch_size)

    def fit(self, texts: Sequence[str], dev_texts: Optional[Sequence[str]] = None) -> CharLM:
        texts = [t for t in texts if t]
        if not texts:
            raise DataError("No LM training text")
        size = self.cfg.lm.batch_size
        for epoch in range(1, self.cfg.lm.epochs + 1):
            self.lm.train()
            order = self.order_rng.permutation(len(texts))
            nll, tokens = 0.0, 0
            for start in range(0, len(texts), size):
                chunk = [texts[i] for i in order[start : start + size]]
                inputs, targets = lm_batch(chunk, self.vocab)
                self.optimizer.zero_grad()
                loss = attention_loss(self.lm(inputs), targets)
                if not np.isfinite(loss.item()):
                    raise NumericError("Non-finite LM loss", {"epoch": epoch, "step": self.optimizer.step_count + 1})
                backward(loss)
                self.optimizer.step()
                nll += loss.item() * len(chunk)
                tokens += int((targets >= 0).sum())
            summary = {"epoch": epoch, "train_ppl": math.exp(nll / max(tokens, 1))}
            if dev_texts:
                summary["dev_ppl"] = self.perplexity(dev_texts)
            self.info(f"LM {format_metrics(summary)}")
        return self.lm.eval()

    def save(self, path: Union[str, Path]) -> None:
        save_checkpoint(
            path,
            model_checkpoint(
                self.lm,
                self.cfg,
                self.vocab,
                kind="lm",
                step=self.optimizer.step_count,
                epoch=self.cfg.lm.epochs,
                rng_state={
                    "seed": self.seed,
                    "epoch": self.cfg.lm.epochs,
                    "generators": generator_states({"order": self.order_rng, **dropout_generators(self.lm)}),
                },
            ),
        )


def read_lm_text(path: Union[str, Path]) -> list[str]:
    with open(path, "r", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.rstrip("\n")]


def train_lm(
    cfg: ExperimentConfig,
    vocab: Vocabulary,
    texts: Sequence[str],
    out_path: Optional[Union[str, Path]] = None,
    seed: int = 0,
    dev_texts: Optional[Sequence[str]] = None,
) -> CharLM:
    trainer = LmTrainer(cfg, vocab, seed)
    lm = trainer.fit(texts, dev_texts)
    if out_path is not None:
        trainer.save(out_path)
    return lm
