"""Task streams: synthetic domain-drifting sentiment tasks and TSV corpora.

Tokenization is a hash-bucket vocabulary: lowercase, whitespace split,
stable 64-bit hash into the non-reserved id range.  Synthetic tasks mix
three word populations: shared sentiment cues whose polarity never
changes (these carry transfer across tasks), domain words whose polarity
is re-rolled per task with probability ``domain_drift`` (these create
conflicts that make naive sequential fine-tuning forget), and background
noise words with no label signal.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

PAD = 0
CLS = 1
UNK = 2
N_RESERVED = 3

# word-pool sizes for the synthetic generator; every task draws on the
# whole domain vocabulary, so a drift-sized share of it carries opposite
# polarity between any two tasks and sequentially tuned shared parameters
# are pulled back and forth across the stream
_SHARED_POOL = 30  # per polarity
_DOMAIN_UNIVERSE = 60
_DOMAIN_PER_TASK = 60
_NOISE_POOL = 300


def _hash_word(word: str, vocab_size: int) -> int:
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    return N_RESERVED + int.from_bytes(digest, "little") % (vocab_size - N_RESERVED)


def encode(text: str, vocab_size: int = 2048, max_len: int = 32) -> np.ndarray:
    """CLS-prefixed hashed token ids, padded or truncated to max_len."""
    ids = [CLS]
    for word in text.lower().split():
        if len(ids) == max_len:
            break
        ids.append(_hash_word(word, vocab_size))
    ids.extend([PAD] * (max_len - len(ids)))
    return np.asarray(ids, dtype=np.int64)


@dataclass
class Example:
    token_ids: np.ndarray
    label: int


@dataclass
class TaskSpec:
    task_id: int
    name: str
    train: list[Example]
    dev: list[Example]
    test: list[Example]


@dataclass
class TaskStream:
    tasks: list[TaskSpec]
    seed: int
    order: list[int] = field(default_factory=list)  # permutation applied, if any

    def __post_init__(self):
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate task ids in stream: {ids}")


def split_arrays(examples: list[Example]) -> tuple[np.ndarray, np.ndarray]:
    """Stack one split into (ids, labels) arrays for batching."""
    ids = np.stack([e.token_ids for e in examples])
    labels = np.asarray([e.label for e in examples], dtype=np.int64)
    return ids, labels


def _draw_task_texts(
    rng: np.random.Generator,
    count: int,
    shared: tuple[list[str], list[str]],
    domain: tuple[list[str], list[str]],
    noise_words: list[str],
    shared_signal: float,
) -> list[tuple[str, int]]:
    texts = []
    for i in range(count):
        label = i % 2  # alternating labels keep every split balanced
        n_cues = int(rng.integers(6, 11))
        n_noise = int(rng.integers(3, 7))
        mixed = rng.random() < shared_signal
        n_shared = max(1, n_cues // 3) if mixed else 0
        words = []
        for c in range(n_cues):
            pool = shared[label] if c < n_shared else domain[label]
            words.append(pool[int(rng.integers(len(pool)))])
        for _ in range(n_noise):
            words.append(noise_words[int(rng.integers(len(noise_words)))])
        perm = rng.permutation(len(words))
        texts.append((" ".join(words[j] for j in perm), label))
    return texts


def generate_synthetic_texts(
    n_tasks: int,
    seed: int,
    shared_signal: float = 0.5,
    domain_drift: float = 0.5,
    sizes: tuple[int, int, int] = (1400, 200, 400),
) -> list[tuple[str, tuple[list[tuple[str, int]], ...]]]:
    """Raw (text, label) pairs per task, one list per split.

    ``shared_signal`` is the fraction of examples that mix cues from the
    task-independent sentiment pools with domain cues (a third of the
    cue slots in a mixed example are shared); the remaining examples
    carry domain cues only.  ``domain_drift`` is the probability
    a domain word's polarity is flipped against the global assignment for
    a given task, so successive tasks disagree about a drift-sized share
    of the domain vocabulary.
    """
    if n_tasks < 1:
        raise ValueError(f"need at least one task, got {n_tasks}")
    if not 0.0 <= shared_signal <= 1.0 or not 0.0 <= domain_drift <= 1.0:
        raise ValueError("shared_signal and domain_drift must lie in [0, 1]")

    shared_neg = [f"sn{i}" for i in range(_SHARED_POOL)]
    shared_pos = [f"sp{i}" for i in range(_SHARED_POOL)]
    domain_words = [f"dw{i}" for i in range(_DOMAIN_UNIVERSE)]
    noise_words = [f"bg{i}" for i in range(_NOISE_POOL)]

    global_rng = np.random.default_rng([seed, 0xD0])
    global_polarity = global_rng.integers(0, 2, size=_DOMAIN_UNIVERSE)

    tasks = []
    for t in range(1, n_tasks + 1):
        task_rng = np.random.default_rng([seed, 0xD1, t])
        chosen = task_rng.choice(_DOMAIN_UNIVERSE, size=_DOMAIN_PER_TASK, replace=False)
        flipped = task_rng.random(_DOMAIN_PER_TASK) < domain_drift
        polarity = np.where(flipped, 1 - global_polarity[chosen], global_polarity[chosen])
        domain_neg = [domain_words[w] for w, p in zip(chosen, polarity) if p == 0]
        domain_pos = [domain_words[w] for w, p in zip(chosen, polarity) if p == 1]
        # guarantee both polarities exist so cue drawing cannot starve
        if not domain_neg:
            domain_neg = [domain_words[chosen[0]]]
        if not domain_pos:
            domain_pos = [domain_words[chosen[-1]]]

        splits = []
        for split_idx, count in enumerate(sizes):
            split_rng = np.random.default_rng([seed, 0xD2, t, split_idx])
            splits.append(
                _draw_task_texts(
                    split_rng, count, (shared_neg, shared_pos),
                    (domain_neg, domain_pos), noise_words, shared_signal,
                )
            )
        tasks.append((f"synthetic-{t}", tuple(splits)))
    return tasks


def generate_synthetic_stream(
    n_tasks: int,
    seed: int,
    shared_signal: float = 0.5,
    domain_drift: float = 0.5,
    sizes: tuple[int, int, int] = (1400, 200, 400),
    vocab_size: int = 2048,
    max_len: int = 32,
) -> TaskStream:
    """K tokenized sentiment-like tasks over a drifting domain vocabulary."""
    text_tasks = generate_synthetic_texts(n_tasks, seed, shared_signal,
                                          domain_drift, sizes)
    tasks = []
    for t, (name, splits) in enumerate(text_tasks, start=1):
        encoded = [
            [Example(encode(text, vocab_size, max_len), label)
             for text, label in split]
            for split in splits
        ]
        tasks.append(TaskSpec(t, name, *encoded))
    return TaskStream(tasks, seed)


def load_tsv_task(
    path: str,
    task_id: int = 1,
    name: str | None = None,
    split_seed: int = 13,
    vocab_size: int = 2048,
    max_len: int = 32,
) -> TaskSpec:
    """One task from a TSV file of ``label<TAB>text`` lines, split 70/10/20."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                raise ValueError(f"{path}:{lineno}: empty line")
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected label<TAB>text")
            label, text = parts
            if label not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            if not text.strip():
                raise ValueError(f"{path}:{lineno}: empty text field")
            rows.append(Example(encode(text, vocab_size, max_len), int(label)))
    if not rows:
        raise ValueError(f"{path}: no examples")

    order = np.random.default_rng([split_seed, len(rows)]).permutation(len(rows))
    n_train = int(0.7 * len(rows))
    n_dev = int(0.1 * len(rows))
    train = [rows[i] for i in order[:n_train]]
    dev = [rows[i] for i in order[n_train : n_train + n_dev]]
    test = [rows[i] for i in order[n_train + n_dev :]]
    return TaskSpec(task_id, name or path, train, dev, test)
