"""Writes the bundled natural test images (scikit-image's public-domain
astronaut photograph) at 256x256 and 64x64 with area resampling."""
import sys
from pathlib import Path

from PIL import Image
from skimage import data

out = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent.parent / "assets")
img = Image.fromarray(data.astronaut())
for size in (256, 64):
    img.resize((size, size), Image.Resampling.BOX).save(out / f"astronaut_{size}.png")
