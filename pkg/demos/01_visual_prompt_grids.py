"""Visual-prompt grids: compose four images into a 2x2 grid, mask the query
slot with grey, and take it apart again.

Run:  python3 demos/01_visual_prompt_grids.py
Writes PNGs under demos/output/grids/.
"""

from pathlib import Path

import numpy as np
import torch

from gridedit.grid import compose, decompose, mask_query
from gridedit.pngio import write_grid, write_png, write_quadrants
from gridedit.synth import ProceduralPairSynthesizer

out_dir = Path(__file__).parent / "output" / "grids"
out_dir.mkdir(parents=True, exist_ok=True)

# render an example editing pair and a query pair with the same instruction:
# "turn the crimson square into a salmon square"
synth = ProceduralPairSynthesizer(image_size=32)
rng = np.random.default_rng(0)
example_in, example_out = synth.synthesize(
    "a small crimson square on a navy background",
    "a small salmon square on a navy background", rng)
query_in, query_out = synth.synthesize(
    "a large crimson square on a sky background",
    "a large salmon square on a sky background", rng)

# ground-truth training grid: all four quadrants filled
train_grid = compose(example_in, example_out, query_in, query_out)
write_grid(out_dir / "train", train_grid)

# conditioning grid: same grid with the query output masked grey
cond_grid = mask_query(train_grid, grey=0.5)
write_grid(out_dir / "cond", cond_grid)
write_quadrants(out_dir / "cond", cond_grid)

# decompose is the exact inverse of compose
quadrants = decompose(train_grid)
assert all(torch.equal(a, b) for a, b in
           zip(quadrants, (example_in, example_out, query_in, query_out)))

print(f"train grid: {tuple(train_grid.shape)} -> {out_dir / 'train_grid.png'}")
print(f"cond grid:  {tuple(cond_grid.shape)} -> {out_dir / 'cond_grid.png'}")
print("roundtrip decompose(compose(...)) is bit-exact")
