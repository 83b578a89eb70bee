"""Regenerate the committed golden container fixtures.

Builds two deterministic toy images, runs the exporter's synthetic
backend over them, derives a PCA basis by invoking the engine CLI on the
exported features (file interfaces only), exports a query through that
basis, and copies the results into tests/golden/ of both packages.

Run from the repository root:  python3 exporter/tools/make_goldens.py
"""

import os
import shutil
import subprocess
import sys
import tempfile

import numpy as np
from PIL import Image

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from splat_feature_export.jobs import (ExportJob, export_features,  # noqa: E402
                                       export_masks, export_query)

GOLDEN_DIM = 96
QUERY_TEXT = "wooden chess piece"


def toy_image(seed: int, h: int = 8, w: int = 6) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    r = (xs / (w - 1) + 0.1 * seed) % 1.0
    g = ys / (h - 1)
    b = ((xs + ys) % 3) / 2.0
    return np.stack([r, g, b], axis=2)


def main() -> None:
    repo = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))
    golden_dir = os.path.join(repo, "tests", "golden")
    os.makedirs(golden_dir, exist_ok=True)

    with tempfile.TemporaryDirectory() as work:
        image_dir = os.path.join(work, "images")
        os.makedirs(image_dir)
        for i in range(2):
            img = (toy_image(i) * 255).astype(np.uint8)
            Image.fromarray(img).save(os.path.join(image_dir, f"toy{i}.png"))

        feat_dir = os.path.join(work, "features")
        mask_dir = os.path.join(work, "masks")
        export_features(ExportJob(image_dir, feat_dir,
                                  backend=f"synthetic:{GOLDEN_DIM}"))
        export_masks(ExportJob(image_dir, mask_dir))

        # the basis comes from the engine CLI, spoken to through files only
        refined = os.path.join(work, "refined")
        subprocess.run(
            [sys.executable, "-m", "lexsplat.cli",
             "--manifest", os.path.join(work, "m.jsonl"),
             "preprocess-features", "--features", feat_dir,
             "--masks", mask_dir, "--out", refined],
            check=True, cwd=repo)

        query_path = os.path.join(work, "query.tgrq")
        export_query(QUERY_TEXT, os.path.join(refined, "basis.tgrp"),
                     query_path, backend=f"synthetic:{GOLDEN_DIM}")

        for src, name in [
                (os.path.join(feat_dir, "toy0.tgrf"), "toy0.tgrf"),
                (os.path.join(mask_dir, "toy0.tgrm"), "toy0.tgrm"),
                (os.path.join(refined, "basis.tgrp"), "basis.tgrp"),
                (query_path, "query.tgrq")]:
            shutil.copy(src, os.path.join(golden_dir, name))
    print(f"golden fixtures written to {golden_dir}")


if __name__ == "__main__":
    main()
