#!/usr/bin/env python3
"""Generate a synthetic linear stack as BWAT tensors for the CLI demo.

Writes w0.bwat ... w{L-1}.bwat, calib.bwat and inputs.bwat into --out-dir.
Weights are Gaussian with a few high-variance input channels so the outlier
path has something to do.
"""

import argparse
from pathlib import Path

import numpy as np

from bwaq import write_tensor


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default="synthetic")
    ap.add_argument("--layers", type=int, default=3)
    ap.add_argument("--width", type=int, default=512)
    ap.add_argument("--calib-tokens", type=int, default=2048)
    ap.add_argument("--eval-tokens", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    # a handful of loud channels, as real activations tend to have
    channel_scale = np.ones(args.width)
    loud = rng.choice(args.width, size=args.width // 32, replace=False)
    channel_scale[loud] = rng.uniform(5, 20, size=loud.size)

    for i in range(args.layers):
        w = rng.normal(size=(args.width, args.width)) / np.sqrt(args.width)
        write_tensor(out / f"w{i}.bwat", w)
    write_tensor(out / "calib.bwat", rng.normal(size=(args.calib_tokens, args.width)) * channel_scale)
    write_tensor(out / "inputs.bwat", rng.normal(size=(args.eval_tokens, args.width)) * channel_scale)
    print(f"wrote {args.layers} weight tensors + calib/inputs to {out}/")


if __name__ == "__main__":
    main()
