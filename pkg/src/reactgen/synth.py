"""Synthetic dyadic-interaction corpus.

Each behaviour is a smooth sinusoidal speaker clip plus M listener clips
drawn from behaviour-conditioned latent modes: every mode is a deterministic
transform of the speaker's trajectory parameters (phase shift, amplitude and
a signed attribute offset), and listeners add seeded smooth noise on top.
The appropriateness grouping is the manifest itself: the M listeners of a
behaviour are its appropriate reactions.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .graphs import ReactionClip, read_clips, write_clips
from .numeric import DomainError, Rng, derive_seed


@dataclass(frozen=True)
class SynthSpec:
    attributes: int = 8
    frames: int = 64
    behaviors: int = 6
    reactions: int = 4
    modes: int = 2
    noise: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.attributes < 2 or self.frames < 2:
            raise DomainError("need at least 2 attributes and 2 frames")
        if self.reactions < 2:
            raise DomainError("need at least 2 reactions per behaviour")
        if self.modes < 1 or self.behaviors < 1:
            raise DomainError("need at least 1 mode and 1 behaviour")
        if self.noise < 0:
            raise DomainError("noise scale must be >= 0")


@dataclass(frozen=True)
class Behavior:
    behavior_id: str
    speaker: ReactionClip
    listeners: list
    modes: list = field(default_factory=list)


def _smooth_noise(rng, frames, scale):
    """Zero-mean smooth perturbation: three seeded low-frequency sinusoids."""
    if scale == 0.0:
        return np.zeros(frames)
    t = np.arange(frames) / frames
    out = np.zeros(frames)
    for harmonic in (1, 2, 3):
        amp = rng.normal(0.0, scale / np.sqrt(3.0))
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out += amp * np.sin(2.0 * np.pi * harmonic * t + phase)
    return out


def generate_corpus(spec):
    """Fully seed-deterministic corpus of Behavior records."""
    t = np.arange(spec.frames) / spec.frames
    behaviors = []
    # global signed offset pattern so the same mode points the same way everywhere
    pattern_rng = Rng(derive_seed(spec.seed, "mode-pattern"))
    signs = np.where(pattern_rng.uniform(size=spec.attributes) < 0.5, -1.0, 1.0)
    for b in range(spec.behaviors):
        rng = Rng(derive_seed(spec.seed, "behavior", b))
        freq = rng.uniform(0.75, 2.5)
        phases = rng.uniform(0.0, 2.0 * np.pi, spec.attributes)
        speaker_vals = np.empty((spec.attributes, spec.frames))
        for i in range(spec.attributes):
            speaker_vals[i] = 0.5 + 0.35 * np.sin(2.0 * np.pi * freq * t + phases[i])
        speaker = ReactionClip(f"b{b:03d}_speaker",
                               np.clip(speaker_vals, 0.0, 1.0))
        mode_shift = rng.uniform(0.5 * np.pi, 1.0 * np.pi)
        listeners, mode_labels = [], []
        for m in range(spec.reactions):
            mode = m % spec.modes
            noise_rng = Rng(derive_seed(spec.seed, "listener", b, m))
            offset = (1.0 if mode % 2 == 0 else -1.0) * 0.17 * signs
            vals = np.empty((spec.attributes, spec.frames))
            for i in range(spec.attributes):
                base = 0.5 + offset[i] + 0.28 * np.sin(
                    2.0 * np.pi * freq * t + phases[i] + mode_shift * mode)
                vals[i] = base + _smooth_noise(noise_rng, spec.frames, spec.noise)
            listeners.append(ReactionClip(
                f"b{b:03d}_l{m:02d}_mode{mode}", np.clip(vals, 0.0, 1.0)))
            mode_labels.append(mode)
        behaviors.append(Behavior(f"b{b:03d}", speaker, listeners, mode_labels))
    return behaviors


# -- corpus files --------------------------------------------------------------

def write_corpus(directory, behaviors):
    """manifest.json mapping behavior_id -> {speaker, listeners} clip paths,
    one JSON-Lines clip file per clip."""
    clips_dir = os.path.join(directory, "clips")
    os.makedirs(clips_dir, exist_ok=True)
    manifest = {}
    for behavior in behaviors:
        speaker_path = os.path.join("clips", f"{behavior.speaker.clip_id}.jsonl")
        write_clips(os.path.join(directory, speaker_path), [behavior.speaker])
        listener_paths = []
        for clip in behavior.listeners:
            rel = os.path.join("clips", f"{clip.clip_id}.jsonl")
            write_clips(os.path.join(directory, rel), [clip])
            listener_paths.append(rel)
        manifest[behavior.behavior_id] = {
            "speaker": speaker_path,
            "listeners": listener_paths,
        }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _single_clip(directory, rel_path):
    clips = read_clips(os.path.join(directory, rel_path))
    if len(clips) != 1:
        raise DomainError(
            f"{rel_path}: manifest entries must reference exactly one clip, "
            f"found {len(clips)}")
    return clips[0]


def read_corpus(directory):
    manifest_path = os.path.join(directory, "manifest.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DomainError(f"no manifest.json under {directory}") from None
    except json.JSONDecodeError as err:
        raise DomainError(f"{manifest_path}: invalid JSON ({err.msg})") from None
    behaviors = []
    for behavior_id in sorted(manifest):
        entry = manifest[behavior_id]
        try:
            speaker = _single_clip(directory, entry["speaker"])
            listeners = [_single_clip(directory, rel)
                         for rel in entry["listeners"]]
        except (KeyError, TypeError):
            raise DomainError(
                f"{manifest_path}: behaviour {behavior_id!r} needs "
                f"'speaker' and 'listeners' fields") from None
        modes = []
        for clip in listeners:
            tag = clip.clip_id.rsplit("_mode", 1)
            modes.append(int(tag[1]) if len(tag) == 2 and tag[1].isdigit() else -1)
        behaviors.append(Behavior(behavior_id, speaker, listeners, modes))
    if not behaviors:
        raise DomainError(f"{manifest_path}: empty corpus")
    return behaviors
