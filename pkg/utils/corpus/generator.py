from pathlib import Path
from typing import Optional, Union

import numpy as np

from utils import write_json
from utils.data_types.corpus_types import AmbiguityMap, CorpusConfig, Utterance
from utils.data_types.vocabulary import Vocabulary
from utils.errors import DataError
from utils.logging import LoggedClass
from .features import save_features, write_manifest
from .normalize import compute_stats

SAMPLE_RATE = 16000
SAMPLES_PER_FRAME = 640
GLYPH_CELL = 4


class CorpusGenerator(LoggedClass):
    """Synthetic audio-visual corpus with controllable visual ambiguity.

    Transcripts come from a random character bigram source. Each character
    lasts a random number of frames; its visual frames show the prototype of
    its viseme class (characters merged by the ambiguity map share one) and
    its audio frames the character's own prototype, both plus Gaussian noise.
    Every utterance draws from its own generator seeded by (seed, index), so
    the output only depends on the configuration.

    Parameters
    ----------
    cfg: CorpusConfig
        Generation parameters; validated on construction.
    """

    def __init__(self, cfg: CorpusConfig) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.characters = cfg.characters
        self.ambiguity: AmbiguityMap = cfg.ambiguity()
        if self.ambiguity.is_degenerate:
            self.warning("Ambiguity map puts every character in one viseme class; visual input carries no information")
        rng = np.random.default_rng([cfg.seed, 0])
        self.bigram = self._bigram(rng)
        self.visual_prototypes = self._visual_prototypes(rng)
        self.audio_prototypes = self._audio_prototypes(rng)

    def _bigram(self, rng: np.random.Generator) -> np.ndarray:
        """Row i: next-character distribution after character i; last row: first character."""
        n = len(self.characters)
        table = rng.dirichlet(np.full(n, 0.5), size=n + 1)
        if " " in self.characters:
            space = self.characters.index(" ")
            table[space, space] = 0.0
            table[n, space] = 0.0
            table /= table.sum(axis=1, keepdims=True)
        return table

    def _visual_prototypes(self, rng: np.random.Generator) -> np.ndarray:
        classes = self.ambiguity.num_classes
        if self.cfg.mode == "feature":
            return rng.normal(size=(classes, self.cfg.visual_dim))
        cells = -(-self.cfg.canvas // GLYPH_CELL)
        glyphs = rng.random((classes, cells, cells)) > 0.5
        block = np.ones((GLYPH_CELL, GLYPH_CELL))
        return np.stack([np.kron(g, block)[: self.cfg.canvas, : self.cfg.canvas] for g in glyphs]).astype(np.float64)

    def _audio_prototypes(self, rng: np.random.Generator) -> np.ndarray:
        n = len(self.characters)
        if not self.cfg.audio_waveform:
            return rng.normal(size=(n, self.cfg.audio_dim))
        t = np.arange(SAMPLES_PER_FRAME) / SAMPLE_RATE
        freqs = rng.uniform(100.0, 4000.0, size=(n, 3))
        phases = rng.uniform(0.0, 2 * np.pi, size=(n, 3))
        return np.sin(2 * np.pi * freqs[:, :, None] * t + phases[:, :, None]).sum(axis=1) / 3.0

    def sample_transcript(self, rng: np.random.Generator) -> str:
        length = int(rng.integers(self.cfg.min_chars, self.cfg.max_chars + 1))
        n = len(self.characters)
        out: list[int] = []
        previous = n
        for position in range(length):
            probs = self.bigram[previous]
            if position == length - 1 and " " in self.characters:
                probs = probs.copy()
                probs[self.characters.index(" ")] = 0.0
                if probs.sum() == 0:
                    probs = np.ones(n)
                    probs[self.characters.index(" ")] = 0.0
                probs /= probs.sum()
            previous = int(rng.choice(n, p=probs))
            out.append(previous)
        return "".join(self.characters[i] for i in out)

    def render(self, transcript: str, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Visual and audio streams of one transcript, frame-aligned."""
        visual, audio = [], []
        for c in transcript:
            repeat = int(rng.integers(self.cfg.min_frames_per_char, self.cfg.max_frames_per_char + 1))
            v = self.visual_prototypes[self.ambiguity.classes[c]]
            a = self.audio_prototypes[self.characters.index(c)]
            visual.extend([v] * repeat)
            audio.extend([a] * repeat)
        visual_arr = np.stack(visual)
        audio_arr = np.stack(audio)
        visual_arr = visual_arr + self.cfg.sigma_visual * rng.normal(size=visual_arr.shape)
        audio_arr = audio_arr + self.cfg.sigma_audio * rng.normal(size=audio_arr.shape)
        if self.cfg.audio_waveform:
            audio_arr = audio_arr.reshape(-1)
        return visual_arr.astype(np.float32), audio_arr.astype(np.float32)

    def utterance(self, index: int) -> Utterance:
        rng = np.random.default_rng([self.cfg.seed, index + 1])
        transcript = self.sample_transcript(rng)
        visual, audio = self.render(transcript, rng)
        utt_id = f"utt{index:06d}"
        return Utterance(
            id=utt_id,
            language=self.cfg.language,
            transcript=transcript,
            frames=int(visual.shape[0]),
            visual_path=f"features/{utt_id}.visual.vsrf",
            audio_path=f"features/{utt_id}.audio.vsrf",
            visual=visual,
            audio=audio,
        )

    def split_indices(self) -> dict[str, list[int]]:
        size = self.cfg.size
        order = np.random.default_rng([self.cfg.seed, 1 << 20]).permutation(size)
        n_dev = int(round(size * self.cfg.dev_fraction))
        n_test = int(round(size * self.cfg.test_fraction))
        if size - n_dev - n_test < 1:
            raise DataError(f"A corpus of {size} utterances leaves no training data after dev/test splits")
        return {
            "dev": sorted(order[:n_dev].tolist()),
            "test": sorted(order[n_dev : n_dev + n_test].tolist()),
            "train": sorted(order[n_dev + n_test :].tolist()),
        }

    def generate(self, out_dir: Union[str, Path]) -> dict[str, int]:
        """Write manifests, feature files, vocabulary, LM text and statistics.

        Returns
        -------
        dict[str, int]
            Number of utterances per split.
        """
        out_dir = Path(out_dir)
        (out_dir / "features").mkdir(parents=True, exist_ok=True)
        counts = {}
        train_utts: list[Utterance] = []
        for split, indices in self.split_indices().items():
            utts = []
            for index in indices:
                utt = self.utterance(index)
                save_features(out_dir / utt.visual_path, utt.visual)
                save_features(out_dir / utt.audio_path, utt.audio)
                utts.append(utt)
            write_manifest(out_dir / f"{split}.jsonl", utts)
            counts[split] = len(utts)
            if split == "train":
                train_utts = utts
            self.info(f"Wrote {len(utts)} {split} utterances")

        Vocabulary(self.characters, self.cfg.language).save(out_dir / "vocab.txt")
        with open(out_dir / "lm_text.txt", "w", encoding="utf-8", newline="\n") as f:
            for utt in train_utts:
                f.write(utt.transcript + "\n")
        write_json(out_dir / "stats.json", compute_stats(train_utts, provenance="train").to_dict())
        write_json(
            out_dir / "corpus.json",
            {"config": self.cfg.to_dict(), "ambiguity": self.ambiguity.to_dict(), "counts": counts},
        )
        groups = self.ambiguity.homophene_groups
        self.info(f"Corpus written to {out_dir} with homophene groups {groups or 'none'}")
        return counts


def generate_corpus(cfg: CorpusConfig, out_dir: Union[str, Path], generator: Optional[CorpusGenerator] = None) -> dict[str, int]:
    return (generator or CorpusGenerator(cfg)).generate(out_dir)
