"""Distinct encoder blocks and parameter count across shared-layer ranges.

Usage: python3 scripts/layer_sharing.py [--layers L]
"""

from __future__ import annotations

import argparse

import numpy as np

from fastslow.encoder import EncoderConfig, FeatureMatrix, encode_offline_oracle, encode_stream, init_encoder


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--layers", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    L = args.layers
    rng = np.random.default_rng(args.seed)
    base = EncoderConfig(L, 16, 4, 32, segment_size=4, right_context=1, input_dim=6)
    plain = init_encoder(base, rng, "plain").layer_parameter_count()
    feats = FeatureMatrix(rng.standard_normal((17, 6)).astype(np.float32))
    print(f"{'range':>9} {'blocks':>6} {'ratio':>6} {'stream_diff':>11}")
    ranges = [None] + [(a, L - a + 1) for a in range(2, L // 2 + 1, max(1, L // 8))]
    for r in ranges:
        cfg = EncoderConfig(L, 16, 4, 32, segment_size=4, right_context=1, shared_layer_range=r, input_dim=6)
        w = init_encoder(cfg, rng, "enc")
        mains, _ = encode_stream(cfg, w, feats)
        diff = float(np.max(np.abs(mains - encode_offline_oracle(cfg, w, feats))))
        label = "none" if r is None else f"{r[0]}-{r[1]}"
        print(f"{label:>9} {len(w.distinct_layers()):>6} {w.layer_parameter_count() / plain:>6.3f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
