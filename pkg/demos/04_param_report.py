"""Parameter accounting for the shipped presets.

Run: python3 demos/04_param_report.py

Counts are grouped into embeddings (stem and inception embeddings),
attention blocks, resampling (strided, transposed and skip-fuse convs) and
the mask head. The reported totals of the reference networks are listed for
context only; their block internals are not published, so the numbers are
not expected to agree.
"""

from imse.model import REFERENCE_PARAMS_M, build_model, count_params, preset

for name in ("micro", "tiny", "full"):
    cfg = preset(name)
    r = count_params(build_model(cfg, 0))
    print(f"{name:6s} C0={cfg.base_channels:<3d} levels={cfg.levels}  " +
          "  ".join(f"{k}={v}" for k, v in r.as_dict().items()))

print("\nreported totals (context only):")
for k, v in REFERENCE_PARAMS_M.items():
    print(f"  {k:28s} {v:.3f} M")
