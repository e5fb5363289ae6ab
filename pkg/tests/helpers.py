"""Shared test utilities: random batches, brute-force metric counter, acceptance log."""

import contextlib
import time

import numpy as np

from ddxt.tokenizer import BOS_ID, EOS_ID, N_SPECIALS, PAD_ID

ACCEPTANCE_RESULTS: list[str] = []


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record one PASS/FAIL line for an acceptance criterion; failures still raise."""
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        line = f"FAIL  criterion {number:>2}: {title} ({type(exc).__name__}: {str(exc).splitlines()[0][:120]})"
        ACCEPTANCE_RESULTS.append(line)
        print(line)
        raise
    line = f"PASS  criterion {number:>2}: {title} [{time.perf_counter() - start:.1f}s]"
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def random_lengths(rng, batch, max_len, min_len=2):
    return rng.integers(min_len, max_len + 1, size=batch)


def random_enc_batch(rng, batch, max_len, vocab_size):
    """[<bos>, content..., <eos>, <pad>...] rows of random true length."""
    ids = np.full((batch, max_len), PAD_ID, dtype=np.int64)
    lengths = random_lengths(rng, batch, max_len, 3)
    for b, n in enumerate(lengths):
        ids[b, 0] = BOS_ID
        ids[b, 1:n - 1] = rng.integers(N_SPECIALS, vocab_size, size=n - 2)
        ids[b, n - 1] = EOS_ID
    return ids, lengths


def random_dec_batch(rng, batch, max_len, vocab_size):
    """[<bos>, content..., <pad>...] decoder inputs of random true length."""
    ids = np.full((batch, max_len), PAD_ID, dtype=np.int64)
    lengths = random_lengths(rng, batch, max_len, 1)
    for b, n in enumerate(lengths):
        ids[b, 0] = BOS_ID
        ids[b, 1:n] = rng.integers(N_SPECIALS, vocab_size, size=n - 1)
    return ids, lengths


def brute_force_counts(pairs, n_classes):
    """Per-class TP/FP/FN/TN by enumerating every (class, position) event directly."""
    events = []  # (gold or None, pred or None)
    for gt, pred in pairs:
        for i in range(max(len(gt), len(pred))):
            events.append((gt[i] if i < len(gt) else None, pred[i] if i < len(pred) else None))
    out = []
    for c in range(n_classes):
        tp = fp = fn = tn = 0
        for g, p in events:
            if g == c and p == c:
                tp += 1
            elif g == c:
                fn += 1
            elif p == c:
                fp += 1
            else:
                tn += 1
        out.append((tp, fp, fn, tn))
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for g, p in events:
        if g is not None and p is not None:
            confusion[g, p] += 1
    return out, confusion
