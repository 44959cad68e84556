"""Builds the small grayscale image fixtures under tests/data from scikit-image's
bundled sample images (all public domain or CC0)."""

import pathlib

import numpy as np
from skimage import color, data, transform, util

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "data"


def gray(img):
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3])
    return util.img_as_float(img)


def save_pgm(path, img):
    img = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(img.tobytes())


def resize_to_width(img, width):
    h, w = img.shape
    return transform.resize(img, (round(h * width / w), width), anti_aliasing=True)


def main():
    (OUT / "train").mkdir(parents=True, exist_ok=True)
    (OUT / "test").mkdir(parents=True, exist_ok=True)
    train = ["camera", "moon", "coins", "brick", "grass", "gravel", "cell"]
    for name in train:
        img = resize_to_width(gray(getattr(data, name)()), 360)
        h, w = img.shape
        for i, (r, c) in enumerate([(0, 0), (h - 180, w - 180)]):
            save_pgm(OUT / "train" / f"{name}_{i}.pgm", img[r:r + 180, c:c + 180])
    test = ["astronaut", "coffee", "chelsea", "rocket", "hubble_deep_field"]
    for name in test:
        save_pgm(OUT / "test" / f"{name}.pgm", resize_to_width(gray(getattr(data, name)()), 128))
    save_pgm(OUT / "cameraman.pgm", gray(data.camera()))


if __name__ == "__main__":
    main()
