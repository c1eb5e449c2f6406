"""Noise schedule, forward noising, and pseudo-output reconstruction.

Run:  python3 demos/02_diffusion_basics.py
Writes a schedule plot and a noising strip under demos/output/diffusion/.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from gridedit.diffusion import forward_noise, reconstruct_x0
from gridedit.pngio import write_png
from gridedit.schedule import NoiseSchedule
from gridedit.synth import ProceduralPairSynthesizer

out_dir = Path(__file__).parent / "output" / "diffusion"
out_dir.mkdir(parents=True, exist_ok=True)

sched = NoiseSchedule.cosine(50)
print(f"schedule: T={sched.steps}, alpha_0={sched.alpha(0)}, "
      f"alpha_T={sched.alpha(sched.steps)}")

fig, ax = plt.subplots(figsize=(5, 3))
ax.plot(sched.alphas.numpy())
ax.set_xlabel("t")
ax.set_ylabel("alpha_t")
fig.tight_layout()
fig.savefig(out_dir / "schedule.png")
plt.close(fig)

# noising strip: the same image at increasing t
synth = ProceduralPairSynthesizer(image_size=32)
img, _ = synth.synthesize("a large olive circle on a sky background",
                          "a large crimson circle on a sky background",
                          np.random.default_rng(1))
rng = np.random.default_rng(2)
eps = torch.from_numpy(rng.standard_normal(img.shape))
for t in (0, 10, 25, 40, 50):
    x_t = forward_noise(img, t, eps, sched)
    write_png(out_dir / f"noised_t{t:02d}.png", x_t.clamp(0, 1))

# with the true noise, reconstruction is exact for every t < T
for t in (1, 25, 49):
    x_t = forward_noise(img, t, eps, sched)
    err = (reconstruct_x0(x_t, eps, t, sched) - img).abs().max().item()
    print(f"t={t:2d}: reconstruction error {err:.2e}")
print(f"images written to {out_dir}")
