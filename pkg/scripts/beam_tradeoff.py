"""Fast beam size against decoding compute and WER on a synthetic table corpus.

Usage: python3 scripts/beam_tradeoff.py [--utterances N] [--seed S]
"""

from __future__ import annotations

import argparse

import numpy as np

from fastslow.decoder import DecodeConfig, DecodeSession, parallel_decode
from fastslow.harness.fixtures import make_biased_utterance
from fastslow.metrics import corpus_wer
from fastslow.tables import TableFrontend, frame_features


def run(utterances: int, seed: int, beams: list[int], frames: int = 32) -> list[dict]:
    rng = np.random.default_rng(seed)
    corpus = [make_biased_utterance(rng, frames, 4, seed=i) for i in range(utterances)]
    rows = []
    for fb in beams:
        cfg = DecodeConfig(fast_segment=4, slow_segment=8, fast_beam=fb, slow_beam=max(beams))
        compute, fast_pairs, final_pairs = 0, [], []
        for i, (model, ref, _) in enumerate(corpus):
            session = DecodeSession(TableFrontend(4, 8), cfg, model)
            res = parallel_decode(session, frame_features(frames))
            compute += res.counters["joiner_evals"] + res.counters["predictor_evals"]
            words = model.vocab.detokenize(ref).split()
            fast_pairs.append((str(i), words, model.vocab.detokenize(res.fast_final.tokens).split()))
            final_pairs.append((str(i), words, model.vocab.detokenize(res.final.tokens).split()))
        rows.append({"fast_beam": fb, "compute": compute,
                     "wer_fast": corpus_wer(fast_pairs).rate, "wer": corpus_wer(final_pairs).rate})
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--utterances", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--beams", type=int, nargs="+", default=[1, 2, 4, 8])
    args = parser.parse_args()
    print(f"{'fast_beam':>9} {'compute':>9} {'wer_fast':>9} {'wer':>7}")
    for r in run(args.utterances, args.seed, args.beams):
        print(f"{r['fast_beam']:>9} {r['compute']:>9} {r['wer_fast']:>9.4f} {r['wer']:>7.4f}")


if __name__ == "__main__":
    main()
