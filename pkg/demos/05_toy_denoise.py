"""Train the tiny enhancer on tones in white noise and listen to the result.

Run: python3 demos/05_toy_denoise.py [epochs]

Generates 200 synthetic pairs at 0 dB, trains the tiny preset, prints the
per-epoch CSV history and writes noisy.wav / enhanced.wav / clean.wav plus
history.csv into demos/out/. docs/plot_history.gnuplot plots the history.
"""

import sys
from pathlib import Path

import numpy as np

from imse.audio import WavFile, wav_write
from imse.cli import enhance_signal
from imse.model import build_model, preset
from imse.spectral import StftConfig, interior
from imse.training import ToyDatasetConfig, make_toy_dataset, si_snr, train_toy

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

data = make_toy_dataset(ToyDatasetConfig(n_items=200, n_val=40), seed=0)
model = build_model(preset("tiny"), 0)
history = train_toy(model, data, epochs, seed=0, checkpoint=out / "tiny.imse",
                    log=lambda s: print(s, flush=True))
(out / "history.csv").write_text(history.to_csv())
print(f"\nnoisy held-out SI-SNR {history.noisy_val_sisnr_db:.2f} dB; "
      f"after {epochs} epochs {history.records[-1].val_sisnr_db:.2f} dB")

clean, noisy = data.val[0]
enhanced = enhance_signal(model, noisy)
cfg = StftConfig()
sl = interior(cfg, cfg.n_frames(len(noisy)))
print(f"first held-out item: {si_snr(noisy[sl], clean[sl]):.2f} dB -> {si_snr(enhanced[sl], clean[sl]):.2f} dB")
peak = np.abs(noisy).max()
for name, sig in (("clean", clean), ("noisy", noisy), ("enhanced", enhanced)):
    wav_write(out / f"{name}.wav", WavFile(16000, 0.9 * sig / peak))
print(f"wrote {out}/{{clean,noisy,enhanced}}.wav")
