"""Evaluation suite: appropriateness, diversity and synchrony of reaction sets.

Appropriateness compares each generated clip against its most favourable
appropriate real clip (dynamic time warping distance, concordance and Pearson
correlation). Diversity measures variation across frames, across samples for
one behaviour, and across behaviours. Synchrony is the mean absolute
best-correlation lag between speaker and generated series.

Degenerate (zero-variance) series never abort a corpus run: the affected
score contributes 0 and an explanatory flag is recorded.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .numeric import DomainError


@dataclass(frozen=True)
class EvalPair:
    """Generated and appropriate-real reaction sets for one speaker behaviour."""

    behavior_id: str
    speaker: object
    generated: list
    appropriate_real: list

    def __post_init__(self):
        if not self.generated or not self.appropriate_real:
            raise DomainError(
                f"behaviour {self.behavior_id!r}: both clip sets must be non-empty")


@dataclass
class MetricReport:
    """Named metric -> scalar map plus the provenance of the compared sets."""

    values: dict
    flags: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_json(self):
        doc = dict(self.values)
        doc["FRRea"] = "not computed"
        doc["flags"] = list(self.flags)
        doc["provenance"] = dict(self.provenance)
        return json.dumps(doc, sort_keys=True)


# -- dynamic time warping -----------------------------------------------------

def dtw_distance(a, b):
    """Alignment-minimal distance between two 1-D series.

    Symmetric step pattern (match / insert / delete, unit weights) with
    absolute-difference local cost and no window constraint.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size == 0 or y.size == 0:
        raise DomainError("dtw_distance expects non-empty 1-D series")
    return float(_dtw_batch(x[None, :], y[None, :])[0])


def _dtw_batch(xs, ys):
    """DTW distances for a batch of series pairs: xs (B, T1) vs ys (B, T2)."""
    batch, t1 = xs.shape
    t2 = ys.shape[1]
    big = np.inf
    prev = np.full((batch, t2 + 1), big)
    prev[:, 0] = 0.0
    for i in range(1, t1 + 1):
        cur = np.full((batch, t2 + 1), big)
        cost = np.abs(xs[:, i - 1, None] - ys)
        for j in range(1, t2 + 1):
            best = np.minimum(np.minimum(prev[:, j], prev[:, j - 1]), cur[:, j - 1])
            cur[:, j] = cost[:, j - 1] + best
        prev = cur
    return prev[:, t2]


def clip_dtw(gen, real):
    """Per-attribute DTW distances summed across attributes."""
    if gen.values.shape[0] != real.values.shape[0]:
        raise DomainError("clips disagree on attribute count")
    return float(_dtw_batch(gen.values, real.values).sum())


# -- correlation helpers ------------------------------------------------------

def _flat(series, spread):
    # flat up to float roundoff: a constant 0.4 series has std ~1e-17, not 0
    return spread <= 1e-12 * max(1.0, float(np.abs(series).max()))


def _pearson(x, y):
    """(value, degenerate) with population moments; 0 when either side is flat."""
    vx = x - x.mean()
    vy = y - y.mean()
    sx = float(np.sqrt((vx * vx).mean()))
    sy = float(np.sqrt((vy * vy).mean()))
    if _flat(x, sx) or _flat(y, sy):
        return 0.0, True
    return float((vx * vy).mean() / (sx * sy)), False


def _concordance(x, y):
    """Concordance correlation (agreement around the identity line)."""
    mx, my = float(x.mean()), float(y.mean())
    vx = float(((x - mx) ** 2).mean())
    vy = float(((y - my) ** 2).mean())
    cov = float(((x - mx) * (y - my)).mean())
    denom = vx + vy + (mx - my) ** 2
    if _flat(x, np.sqrt(vx)) or _flat(y, np.sqrt(vy)) or denom == 0.0:
        return 0.0, True
    return 2.0 * cov / denom, False


def _best_correlation(pair, corr):
    """Mean over generated clips of the best (max over reals) mean-over-attributes
    correlation. Returns (value, flags)."""
    flags = []
    scores = []
    for g_idx, gen in enumerate(pair.generated):
        best = -np.inf
        for real in pair.appropriate_real:
            attr_vals = []
            for i in range(gen.values.shape[0]):
                value, degenerate = corr(gen.values[i], real.values[i])
                if degenerate:
                    flags.append(
                        f"degenerate_series:behavior={pair.behavior_id},"
                        f"generated={g_idx},attribute={i}")
                attr_vals.append(value)
            best = max(best, float(np.mean(attr_vals)))
        scores.append(best)
    return float(np.mean(scores)), sorted(set(flags))


# -- appropriateness ----------------------------------------------------------

def fr_dist(pair):
    """Mean over generated clips of the DTW distance to the closest
    appropriate real clip."""
    per_generated = []
    for gen in pair.generated:
        per_generated.append(min(clip_dtw(gen, real)
                                 for real in pair.appropriate_real))
    return float(np.mean(per_generated))


def fr_corr(pair):
    return _best_correlation(pair, _concordance)


def pcc(pair):
    return _best_correlation(pair, _pearson)


# -- diversity ----------------------------------------------------------------

def fr_var(clips):
    """Mean per-frame variance within each clip (population variance)."""
    if not clips:
        raise DomainError("need at least one clip")
    return float(np.mean([clip.values.var(axis=1).mean() for clip in clips]))


def _mean_squared_gap(a, b):
    d = a.values - b.values
    return float((d * d).mean())


def fr_div(clips):
    """Mean pairwise squared difference among clips generated for one
    behaviour; 0 (with a flag upstream) for singleton sets."""
    if not clips:
        raise DomainError("need at least one clip")
    if len(clips) == 1:
        return 0.0
    gaps = [_mean_squared_gap(clips[m1], clips[m2])
            for m1 in range(len(clips)) for m2 in range(m1 + 1, len(clips))]
    return float(np.mean(gaps))


def fr_dvs(per_behavior_sets):
    """Mean pairwise squared difference among generations for different
    behaviours (all cross-behaviour clip pairs)."""
    if not per_behavior_sets:
        raise DomainError("need at least one behaviour")
    if len(per_behavior_sets) == 1:
        return 0.0
    gaps = []
    for b1 in range(len(per_behavior_sets)):
        for b2 in range(b1 + 1, len(per_behavior_sets)):
            for gen1 in per_behavior_sets[b1]:
                for gen2 in per_behavior_sets[b2]:
                    gaps.append(_mean_squared_gap(gen1, gen2))
    return float(np.mean(gaps))


# -- synchrony ----------------------------------------------------------------

def synchrony_tlcc(speaker, generated, window=None):
    """Mean absolute best-correlation lag across attributes.

    Positive lag means the generated series trails the speaker. Lags are
    scanned from smallest |lag| outward, so ties resolve to the smaller
    shift. Returns (score, flags).
    """
    s = speaker.values
    g = generated.values
    if s.shape != g.shape:
        raise DomainError("speaker and generated clips must share shape")
    frames = s.shape[1]
    window = frames // 10 if window is None else int(window)
    if window < 0 or window >= frames:
        raise DomainError(f"lag window {window} must lie in [0, frames)")
    lags = sorted(range(-window, window + 1), key=lambda l: (abs(l), l))
    flags = []
    best_lags = []
    for i in range(s.shape[0]):
        best_corr, best_lag = -np.inf, 0
        degenerate_attr = False
        for lag in lags:
            if lag >= 0:
                a, b = s[i, :frames - lag] if lag else s[i], g[i, lag:]
            else:
                a, b = s[i, -lag:], g[i, :frames + lag]
            value, degenerate = _pearson(a, b)
            degenerate_attr = degenerate_attr or degenerate
            if value > best_corr:
                best_corr, best_lag = value, lag
        if degenerate_attr and best_corr <= 0.0:
            flags.append(
                f"degenerate_series:clip={generated.clip_id},attribute={i}")
            best_lags.append(0)
        else:
            best_lags.append(abs(best_lag))
    return float(np.mean(best_lags)), sorted(set(flags))


# -- corpus evaluation --------------------------------------------------------

def evaluate(pairs, window=None):
    """All metrics over a list of EvalPairs, reduced in pair order."""
    if not pairs:
        raise DomainError("need at least one evaluation pair")
    flags = []
    dists, corrs, pccs, tlccs = [], [], [], []
    for pair in pairs:
        dists.append(fr_dist(pair))
        value, f = fr_corr(pair)
        corrs.append(value)
        flags.extend(f)
        value, f = pcc(pair)
        pccs.append(value)
        flags.extend(f)
        for gen in pair.generated:
            value, f = synchrony_tlcc(pair.speaker, gen, window=window)
            tlccs.append(value)
            flags.extend(f)
        if len(pair.generated) == 1:
            flags.append(f"singleton_generated_set:behavior={pair.behavior_id}")
    all_generated = [gen for pair in pairs for gen in pair.generated]
    values = {
        "FRDist": float(np.mean(dists)),
        "FRCorr": float(np.mean(corrs)),
        "PCC": float(np.mean(pccs)),
        "FRVar": fr_var(all_generated),
        "FRDiv": float(np.mean([fr_div(pair.generated) for pair in pairs])),
        "FRDvs": fr_dvs([pair.generated for pair in pairs]),
        "TLCC": float(np.mean(tlccs)),
    }
    provenance = {
        "behaviors": len(pairs),
        "generated_clips": len(all_generated),
        "appropriate_real_clips": sum(len(p.appropriate_real) for p in pairs),
    }
    return MetricReport(values=values, flags=sorted(set(flags)),
                        provenance=provenance)
