"""Frame-level scoring: DER, main-speaker DER, macro F1, and RTTM conversion.

Channel roles are fixed (column 0 main, column 1 background), so no speaker
permutation search is done. There is no collar.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class DerBreakdown:
    n_miss: int
    n_fa: int
    n_confusion: int
    n_total: int

    @property
    def der(self) -> float:
        return (self.n_miss + self.n_fa + self.n_confusion) / self.n_total

    def __add__(self, other: "DerBreakdown") -> "DerBreakdown":
        return DerBreakdown(self.n_miss + other.n_miss, self.n_fa + other.n_fa,
                            self.n_confusion + other.n_confusion, self.n_total + other.n_total)

    def to_dict(self) -> dict:
        return dict(asdict(self), der=self.der if self.n_total else None)


def _check_pair(reference, hypothesis) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(reference)
    hyp = np.asarray(hypothesis)
    if ref.shape != hyp.shape:
        raise ValueError(f"reference {ref.shape} and hypothesis {hyp.shape} differ in shape")
    if ref.ndim == 1:
        ref, hyp = ref[:, None], hyp[:, None]
    return ref.astype(bool), hyp.astype(bool)


def der_counts(reference, hypothesis) -> DerBreakdown:
    """Miss / false alarm / confusion frame counts; N_total may be 0."""
    ref, hyp = _check_pair(reference, hypothesis)
    n_ref = ref.sum(axis=1)
    n_hyp = hyp.sum(axis=1)
    n_correct = (ref & hyp).sum(axis=1)
    return DerBreakdown(
        n_miss=int(np.maximum(n_ref - n_hyp, 0).sum()),
        n_fa=int(np.maximum(n_hyp - n_ref, 0).sum()),
        n_confusion=int((np.minimum(n_ref, n_hyp) - n_correct).sum()),
        n_total=int(n_ref.sum()),
    )


def der(reference, hypothesis) -> DerBreakdown:
    """Frame-level diarization error with fixed channel identities."""
    out = der_counts(reference, hypothesis)
    if out.n_total == 0:
        raise ValueError("DER undefined: reference has no speech")
    return out


def der_main(reference, hypothesis) -> float:
    """(miss + false alarm) / reference frames on the main channel only."""
    ref, hyp = _check_pair(reference, hypothesis)
    counts = der_counts(ref[:, 0], hyp[:, 0])
    if counts.n_total == 0:
        raise ValueError("DER_main undefined: no main-speaker reference frames")
    return counts.der


def f1_main(reference, hypothesis) -> float:
    """Frame F1 on the main channel. Both channels silent counts as perfect."""
    ref, hyp = _check_pair(reference, hypothesis)
    r, h = ref[:, 0], hyp[:, 0]
    tp = int((r & h).sum())
    fp = int((~r & h).sum())
    fn = int((r & ~h).sum())
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def macro_f1(samples) -> float:
    """Unweighted mean of per-sample main-channel F1 over (reference, hypothesis) pairs."""
    samples = list(samples)
    if not samples:
        raise ValueError("macro_f1 needs at least one sample")
    return float(np.mean([f1_main(r, h) for r, h in samples]))


def binarize(probs, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(probs) >= threshold).astype(np.uint8)


def score(samples, names=None) -> dict:
    """Corpus report: pooled DER and DER_main, macro F1, and a per-sample table."""
    samples = list(samples)
    if not samples:
        raise ValueError("nothing to score")
    names = names or [str(i) for i in range(len(samples))]
    total = DerBreakdown(0, 0, 0, 0)
    main = DerBreakdown(0, 0, 0, 0)
    rows = []
    for name, (ref, hyp) in zip(names, samples):
        ref, hyp = np.asarray(ref), np.asarray(hyp)
        d = der_counts(ref, hyp)
        m = der_counts(ref[:, 0], hyp[:, 0])
        total, main = total + d, main + m
        rows.append({"name": name, "der": d.der if d.n_total else None,
                     "der_main": m.der if m.n_total else None, "f1_main": f1_main(ref, hyp),
                     "frames": int(ref.shape[0])})
    return {
        "der": total.der if total.n_total else None,
        "der_main": main.der if main.n_total else None,
        "f1_main": macro_f1(samples),
        "counts": total.to_dict(),
        "counts_main": main.to_dict(),
        "per_sample": rows,
    }


# -- RTTM -----------------------------------------------------------------------

ROLE_NAMES = ("main", "bg")


def segments(activity, frame_hop: float) -> list[tuple[float, float]]:
    """(start, duration) seconds for each run of active frames."""
    a = np.asarray(activity).astype(np.int8)
    edges = np.diff(np.concatenate([[0], a, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [(s * frame_hop, (e - s) * frame_hop) for s, e in zip(starts, ends)]


def to_rttm(file_id: str, activity, frame_hop: float) -> list[str]:
    """RTTM SPEAKER lines for a (T, 2) binary activity matrix, sorted by start time."""
    activity = np.asarray(activity)
    rows = []
    for col, role in enumerate(ROLE_NAMES):
        for start, dur in segments(activity[:, col], frame_hop):
            rows.append((start, f"SPEAKER {file_id} 1 {start:.3f} {dur:.3f} <NA> <NA> {role} <NA> <NA>"))
    return [line for _, line in sorted(rows, key=lambda r: r[0])]


def read_rttm(path) -> dict[str, list[tuple[str, float, float]]]:
    """file id -> [(role, start, duration)]."""
    out: dict[str, list[tuple[str, float, float]]] = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0] != "SPEAKER":
            continue
        out.setdefault(parts[1], []).append((parts[7], float(parts[3]), float(parts[4])))
    return out


def rttm_to_frames(rows, n_frames: int, frame_hop: float) -> np.ndarray:
    """Frame activity from RTTM rows; a frame is active if its start lies inside a segment."""
    act = np.zeros((n_frames, 2), dtype=np.uint8)
    t = np.arange(n_frames) * frame_hop
    for role, start, dur in rows:
        if role not in ROLE_NAMES:
            continue
        col = ROLE_NAMES.index(role)
        # half-frame tolerance absorbs the 3-decimal rounding in the text format
        act[(t >= start - frame_hop / 2) & (t < start + dur - frame_hop / 2), col] = 1
    return act
