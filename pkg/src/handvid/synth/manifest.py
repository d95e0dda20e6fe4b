"""Dataset persistence: lossless frames, masks, keypoints and the manifest.

Layout under a dataset directory:
    manifest.json                      one record per sample, in order
    prior_mask.png                     dataset-level coverage prior, 8-bit
    samples/<id>/frame_###.png         8-bit RGB, lossless
    samples/<id>/mask_###.png          single channel, {0, 255}
    samples/<id>/keypoints.txt         "frame hand joint x y visibility"

Coordinates are stored normalized with 6 decimal places; together with
the integer-pixel ground truth this makes save/load an exact round trip.
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image

from handvid.hand_pose import JOINTS_PER_HAND, KeypointSequence
from handvid.motion_area import MaskVideo, prior_mask, union_over_frames
from handvid.synth.scene import SceneSpec, SynthSample

MANIFEST_NAME = "manifest.json"
PRIOR_NAME = "prior_mask.png"
FORMAT_VERSION = 1


def save_frame_png(frame, path):
    arr = np.rint(np.asarray(frame, dtype=np.float64) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_frame_png(path):
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return (arr / 255.0).astype(np.float32)


def save_mask_png(mask_frame, path):
    arr = (np.asarray(mask_frame) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def load_mask_png(path):
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr > 127).astype(np.uint8)


def save_prior_png(prior: MaskVideo, path):
    arr = np.rint(prior.frame(0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_prior_png(path):
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
    return MaskVideo(arr[None], binary=False, kind="prior")


def write_keypoints_txt(seq: KeypointSequence, path):
    coords, vis = seq.numpy()
    lines = []
    for l in range(seq.frames):
        for j in range(seq.j):
            hand, joint = divmod(j, JOINTS_PER_HAND)
            x, y = coords[l, j]
            lines.append(f"{l} {hand} {joint} {x:.6f} {y:.6f} {int(vis[l, j])}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_keypoints_txt(path, frames, j):
    coords = np.zeros((frames, j, 2), dtype=np.float64)
    vis = np.zeros((frames, j), dtype=np.float64)
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        f_s, hand_s, joint_s, x_s, y_s, v_s = line.split()
        jj = int(hand_s) * JOINTS_PER_HAND + int(joint_s)
        coords[int(f_s), jj] = (float(x_s), float(y_s))
        vis[int(f_s), jj] = int(v_s)
    return KeypointSequence(coords, vis)


def write_manifest(samples, out_dir):
    """Persist a dataset and its coverage prior; returns the manifest path."""
    samples = list(samples)
    if not samples:
        raise ValueError("cannot write a manifest for an empty sample list")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    first = samples[0]
    records = []
    unions = []
    for idx, s in enumerate(samples):
        sid = f"sample_{idx:05d}"
        sdir = out / "samples" / sid
        sdir.mkdir(parents=True, exist_ok=True)
        frame_paths = []
        mask_paths = []
        for l in range(s.frames):
            fp = sdir / f"frame_{l:03d}.png"
            mp = sdir / f"mask_{l:03d}.png"
            save_frame_png(s.video[l], fp)
            save_mask_png(s.gt_frame_masks.numpy()[l], mp)
            frame_paths.append(str(fp.relative_to(out)))
            mask_paths.append(str(mp.relative_to(out)))
        kp = sdir / "keypoints.txt"
        write_keypoints_txt(s.gt_keypoints, kp)
        records.append(
            {
                "id": sid,
                "frames": frame_paths,
                "masks": mask_paths,
                "keypoints": str(kp.relative_to(out)),
                "prompt": s.prompt,
                "action_id": s.action_id,
                "seed": int(s.spec.rng_seed),
                "n_hands": int(s.spec.n_hands),
                "clutter_level": int(s.spec.clutter_level),
            }
        )
        unions.append(union_over_frames(s.gt_frame_masks))

    save_prior_png(prior_mask(unions), out / PRIOR_NAME)
    manifest = {
        "format_version": FORMAT_VERSION,
        "height": int(first.video.shape[1]),
        "width": int(first.video.shape[2]),
        "frames": int(first.frames),
        "j": int(first.gt_keypoints.j),
        "prior_mask": PRIOR_NAME,
        "samples": records,
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


class ManifestDataset:
    """Ordered, lazily cached view of a persisted dataset."""

    def __init__(self, manifest_path):
        p = Path(manifest_path)
        if p.is_dir():
            p = p / MANIFEST_NAME
        self.root = p.parent
        self.meta = json.loads(p.read_text())
        if self.meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{p}: unsupported manifest version")
        self._cache = {}

    def __len__(self):
        return len(self.meta["samples"])

    def record(self, idx):
        return self.meta["samples"][idx]

    def __getitem__(self, idx) -> SynthSample:
        if idx in self._cache:
            return self._cache[idx]
        rec = self.meta["samples"][idx]
        video = np.stack(
            [load_frame_png(self.root / f) for f in rec["frames"]]
        )
        masks = np.stack([load_mask_png(self.root / m) for m in rec["masks"]])
        kp = read_keypoints_txt(
            self.root / rec["keypoints"], self.meta["frames"], self.meta["j"]
        )
        spec = SceneSpec(
            rng_seed=rec["seed"],
            frames=self.meta["frames"],
            height=self.meta["height"],
            width=self.meta["width"],
            action_id=rec["action_id"],
            n_hands=rec["n_hands"],
            clutter_level=rec["clutter_level"],
        )
        sample = SynthSample(
            video=video,
            prompt=rec["prompt"],
            gt_keypoints=kp,
            gt_frame_masks=MaskVideo(masks, binary=True, kind="per_frame"),
            action_id=rec["action_id"],
            spec=spec,
        )
        self._cache[idx] = sample
        return sample

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def load_prior(self) -> MaskVideo:
        return load_prior_png(self.root / self.meta["prior_mask"])


def load_manifest(path) -> ManifestDataset:
    return ManifestDataset(path)
