"""What each inception depthwise branch sees.

Run: python3 demos/02_idconv_strips.py

Feature maps are laid out channels x frequency x time. A single impulse is
fed through each branch with an all-ones kernel; the printed footprints
show the 3x3 square, the 1x11 time strip and the 11x1 frequency strip.
"""

import numpy as np

from imse.idconv import IdConvConfig, idconv_forward, idconv_param_count

cfg = IdConvConfig(4, (1, 1, 1, 1))
x = np.zeros((4, 13, 13))
x[:, 6, 6] = 1.0
w = {name: np.ones(shape) for name, shape in cfg.kernel_shapes().items()}
y = idconv_forward(x, w, cfg)

for c, label in enumerate(["identity", "3x3 square", "1x11 time strip", "11x1 frequency strip"]):
    print(f"{label}  (rows = frequency, columns = time)")
    for row in y[c]:
        print("   " + "".join("#" if v else "." for v in row))
    print()

for channels in (16, 32, 64, 128):
    eq = IdConvConfig.equal(channels)
    print(f"C = {channels:3d}: split {eq.split}, depthwise weights {idconv_param_count(eq)}, "
          f"plus {channels * channels + channels} in the 1x1 mix")
