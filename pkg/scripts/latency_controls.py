"""Emission delay and correction rate against segment sizes, plus loss-knob values.

Usage: python3 scripts/latency_controls.py [--utterances N] [--seed S]
"""

from __future__ import annotations

import argparse

import numpy as np

from fastslow.decoder import DecodeConfig, DecodeSession, parallel_decode
from fastslow.harness.fixtures import make_biased_utterance
from fastslow.metrics import corpus_wer, correction_rate, delay_summary, emission_delays
from fastslow.tables import TableFrontend, frame_features
from fastslow.transducer import PathRestriction, fastemit_loss, random_lattice, restricted_loss, transducer_loss

FRAME_MS = 40.0


def segment_sweep(utterances: int, seed: int, frames: int = 32) -> None:
    rng = np.random.default_rng(seed)
    corpus = [make_biased_utterance(rng, frames, 4, seed=i) for i in range(utterances)]
    print(f"{'fast_seg':>8} {'slow_seg':>8} {'ed_avg':>8} {'ed_p99':>8} {'cr':>7}")
    for fs, ss in [(1, 4), (2, 8), (4, 8), (4, 16), (8, 16)]:
        cfg = DecodeConfig(fast_segment=fs, slow_segment=ss)
        delays, fast_pairs, final_pairs = [], [], []
        for i, (model, ref, align) in enumerate(corpus):
            res = parallel_decode(DecodeSession(TableFrontend(fs, ss), cfg, model), frame_features(frames))
            ref_words = model.vocab.detokenize(ref).split()
            words = model.vocab.words(res.final.tokens)
            hyp = [w for w, _ in words]
            emit = [res.final.token_emit_frames[j] * FRAME_MS for _, j in words]
            delays += emission_delays(hyp, emit, ref_words, [a * FRAME_MS for a in align])
            fast_pairs.append((str(i), ref_words, model.vocab.detokenize(res.fast_final.tokens).split()))
            final_pairs.append((str(i), ref_words, hyp))
        avg, p99 = delay_summary(delays)
        cr = correction_rate(corpus_wer(fast_pairs), corpus_wer(final_pairs))
        print(f"{fs:>8} {ss:>8} {avg:>8.1f} {p99:>8.1f} {cr:>7.4f}")


def loss_knobs(seed: int) -> None:
    rng = np.random.default_rng(seed)
    lattice = random_lattice(rng, 12, 4, 5)
    align = (2, 5, 7, 10)
    base, _ = transducer_loss(lattice)
    print(f"\ntransducer loss {base:.4f}")
    print(f"{'slack':>5} {'restricted':>10}")
    for s in (0, 1, 2, 4):
        print(f"{s:>5} {restricted_loss(lattice, PathRestriction(align, s, s))[0]:>10.4f}")
    print(f"{'lambda':>6} {'fast_emit':>9}")
    for lam in (0.0, 0.01, 0.1, 0.5):
        print(f"{lam:>6} {fastemit_loss(lattice, lam)[0]:>9.4f}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--utterances", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    segment_sweep(args.utterances, args.seed)
    loss_knobs(args.seed)


if __name__ == "__main__":
    main()
