"""The two auxiliary training losses on synthetic scenes.

Editing-shift matching compares what an edit *does* in embedding space;
selective area matching penalizes reconstruction error on detail-critical
segment classes (the figure bins here).

Run:  python3 demos/04_auxiliary_losses.py
"""

import numpy as np
import torch

from gridedit.grid import compose, mask_query
from gridedit.pngio import write_png
from gridedit.providers import MockEmbedder, MockSegmenter, MockUnifier
from gridedit.selective import build_mask, selective_area_loss
from gridedit.shift import editing_shift, editing_shift_loss, grid_shift
from gridedit.synth import ProceduralPairSynthesizer

emb, seg, uni = MockEmbedder(), MockSegmenter(), MockUnifier()
synth = ProceduralPairSynthesizer(image_size=32)
rng = np.random.default_rng(3)

# two pairs under the same instruction, different contexts
pair0 = synth.synthesize("a small crimson square on a navy background",
                         "a small salmon square on a navy background", rng)
pair1 = synth.synthesize("a large crimson square on a lime background",
                         "a large salmon square on a lime background", rng)
grid = compose(pair0[0], pair0[1], pair1[0], pair1[1])

# the editing shift of the grid: embedding delta averaged over both pairs
shift = grid_shift(grid, emb)
print("editing shift (first 6 entries):",
      [round(v, 4) for v in shift[:6].tolist()])

# a grid with the same edit has a well-aligned shift; an unrelated edit not
same_edit = synth.synthesize("a small crimson circle on a sky background",
                             "a small salmon circle on a sky background", rng)
other_edit = synth.synthesize("a small olive circle on a sky background",
                              "a small olive circle on a navy background", rng)
grid_same = compose(*same_edit, *same_edit)
grid_other = compose(*other_edit, *other_edit)
print("loss vs same edit:  ",
      round(editing_shift_loss(grid_shift(grid_same, emb), shift).item(), 4))
print("loss vs other edit: ",
      round(editing_shift_loss(grid_shift(grid_other, emb), shift).item(), 4))

# selective mask: the figure colors land in person/face/animal bins
mask = build_mask(grid, seg, uni, ["human", "creature"])
print("selected classes:", mask.source_classes,
      f"({int(mask.mask.sum())} of {mask.mask.numel()} pixels)")

# the masked loss only sees errors on those pixels
noisy = (grid + 0.1 * torch.from_numpy(
    np.random.default_rng(4).standard_normal(grid.shape))).clamp(0, 1)
print("selective loss vs itself:", selective_area_loss(grid, grid, mask).item())
print("selective loss vs noisy: ",
      round(selective_area_loss(noisy, grid, mask).item(), 6))
