import json

import numpy as np
import pytest

from segscreen.bench import BenchSpec, make_case
from segscreen.segmentor import render_synthetic
from segscreen.sgrid import write_mask, write_sgrid


def write_dataset(root, n_cases=2, seed=5, spec_kwargs=None):
    """Materialize bench-style synthetic cases as an on-disk dataset.

    Produces SGRID intensity/probability files, per-image plan JSON, an
    optional ground-truth mask, and a manifest; returns the manifest path.
    """
    spec = BenchSpec(n_cases=n_cases, seed=seed, **(spec_kwargs or {}))
    entries = []
    for i in range(n_cases):
        case = make_case(spec, i)
        stem = case.image_id
        write_sgrid(root / f"{stem}.intensity.sgrid", case.intensity)
        write_sgrid(root / f"{stem}.organ.sgrid", render_synthetic(case.scene, "organ"))
        write_sgrid(root / f"{stem}.tumor.sgrid", render_synthetic(case.scene, "tumor"))
        gt_bits = np.zeros((spec.frame[1], spec.frame[0]), dtype=bool)
        for m in case.lesion_masks:
            gt_bits |= m.bits
        from segscreen.grid import BinaryMask

        write_mask(root / f"{stem}.gt.sgrid", BinaryMask(gt_bits), spec.spacing)
        plan = {
            "anchors": ["organ"],
            "tumor_prompt": "tumor",
            "roi": {"padding_mm": [25, 25], "scales": [0.8, 1.0, 1.2], "square": True},
            "rationale": "synthetic case",
        }
        (root / f"{stem}.plan.json").write_text(json.dumps(plan))
        entries.append({
            "image_id": stem,
            "intensity": f"{stem}.intensity.sgrid",
            "prompts": {"organ": f"{stem}.organ.sgrid", "tumor": f"{stem}.tumor.sgrid"},
            "plan": f"{stem}.plan.json",
            "ground_truth": f"{stem}.gt.sgrid",
        })
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps({"entries": entries}, indent=2))
    return manifest_path


@pytest.fixture
def small_dataset(tmp_path):
    """One positive and one negative synthetic case on disk."""
    return write_dataset(tmp_path, n_cases=2, seed=5)
