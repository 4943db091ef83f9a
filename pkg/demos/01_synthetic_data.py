"""Generate a synthetic segmentation dataset and render a preview montage.

Every image is a set of class-colored shapes over a textured background,
with per-pixel noise; the rarest class is deliberately small and close in
color to another class, which is what makes uncertainty-driven labelling
pay off later. Run:

    python demos/01_synthetic_data.py
"""

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from pixelpick import SyntheticSpec, generate_synthetic, save_dataset

Path("out").mkdir(exist_ok=True)
spec = SyntheticSpec(num_images=12, height=64, width=64, num_classes=4, seed=7)
dataset = generate_synthetic(spec)
save_dataset(dataset, "out/demo_dataset", spec=spec)
print(f"wrote {len(dataset)} images to out/demo_dataset/")

# Side-by-side montage: image on the left, color-coded mask on the right.
palette = np.asarray(dataset.palette, dtype=np.uint8)
tiles = []
for img, mask in zip(dataset.images[:6], dataset.masks[:6]):
    rgb = np.round(np.asarray(img.pixels, dtype=np.float64) * 255).astype(np.uint8)
    colored = palette[mask.classes]
    tiles.append(np.concatenate([rgb, colored], axis=1))

rows = [np.concatenate(tiles[i : i + 2], axis=1) for i in range(0, 6, 2)]
montage = np.concatenate(rows, axis=0)
PILImage.fromarray(montage).save("out/demo_dataset_preview.png")
print("preview montage: out/demo_dataset_preview.png")

fractions = np.mean(
    [[(m.classes == c).mean() for c in range(4)] for m in dataset.masks], axis=0
)
for name, frac in zip(dataset.class_names, fractions):
    print(f"  {name:<12} {frac:6.1%} of pixels")
