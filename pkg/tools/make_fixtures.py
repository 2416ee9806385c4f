"""Regenerate the bundled fixtures under src/extrapattn/fixtures/."""

import json
from pathlib import Path

import numpy as np

from extrapattn.tensorio import write_tensors

OUT = Path(__file__).resolve().parents[1] / "src" / "extrapattn" / "fixtures"
N_FRAMES, PERIOD, SIDE = 32, 8, 16


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240601)
    base = rng.integers(0, 256, size=(PERIOD, SIDE, SIDE), dtype=np.uint8)
    repeat = base[np.arange(N_FRAMES) % PERIOD]
    noise = rng.integers(0, 256, size=(N_FRAMES, SIDE, SIDE), dtype=np.uint8)
    constant = np.full((N_FRAMES, SIDE, SIDE), 128, dtype=np.uint8)
    for name, frames in (("exact_repeat", repeat), ("noise", noise), ("constant", constant)):
        write_tensors(OUT / f"{name}.bin", {"frames": frames})

    raw_dir = OUT / "exact_repeat_raw"
    raw_dir.mkdir(exist_ok=True)
    names = []
    for i, frame in enumerate(repeat):
        fn = f"frame_{i:03d}.raw"
        frame.tofile(raw_dir / fn)
        names.append(fn)
    manifest = {"frames": names, "shape": [SIDE, SIDE], "dtype": "uint8", "value_range": [0, 255]}
    (raw_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    plant = {
        "target_amps": [0.6, 0.6, 0.6, 1.2],
        "grid": {"t_len": 32, "h_len": 2, "w_len": 2},
        "spatial_constants": [0.2, 0.1],
        "noise_std": 0.2,
        "seed": 7,
    }
    sim = {
        "rope": {"base_period": 8, "ratios": [8, 4, 2, 1], "d_h": 4},
        "plant": plant,
        "policy": {"window": 10, "position_mode": "temporal-frame"},
        "alphas": [1.0, 0.95, 0.9, 0.8, 0.5],
        "proportions": [0.0, 0.5, 1.0],
    }
    (OUT / "simulate_harmonic.json").write_text(json.dumps(sim, indent=2) + "\n")
    (OUT / "plant_harmonic.json").write_text(json.dumps(plant, indent=2) + "\n")
    (OUT / "analyze_theta256.json").write_text(
        json.dumps({"rope": {"theta_t": 256, "d_t": 16}, "seq_len": 132}, indent=2) + "\n"
    )
    phi1 = 0.1
    (OUT / "analyze_ratio_316.json").write_text(
        json.dumps({"rope": {"d_t": 4, "d_h": 0, "d_w": 0, "freq_t": [3.16 * phi1, phi1]}, "seq_len": 132}, indent=2)
        + "\n"
    )
    golden = (1 + 5**0.5) / 2
    (OUT / "analyze_golden.json").write_text(
        json.dumps({"rope": {"d_t": 4, "d_h": 0, "d_w": 0, "freq_t": [1.0, 1.0 / golden]}, "seq_len": 132}, indent=2)
        + "\n"
    )


if __name__ == "__main__":
    main()
