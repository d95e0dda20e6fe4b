"""Synthetic articulated-hand world with exact ground truth."""

from handvid.synth.actions import ACTIONS, PROMPT_TO_ACTION, action_trajectory, prompt_for
from handvid.synth.manifest import ManifestDataset, load_manifest, write_manifest
from handvid.synth.scene import (
    SceneSpec,
    SynthSample,
    dataset_specs,
    generate_dataset,
    generate_sample,
)

__all__ = [
    "ACTIONS",
    "PROMPT_TO_ACTION",
    "ManifestDataset",
    "SceneSpec",
    "SynthSample",
    "action_trajectory",
    "dataset_specs",
    "generate_dataset",
    "generate_sample",
    "load_manifest",
    "prompt_for",
    "write_manifest",
]
