"""Phase-space biomarker features and portrait rendering.

Cycles are delimited by upward zero crossings of the displacement, located
by linear interpolation; the last full cycle of the analysed tail is the one
used for area, which skips the onset transient before the orbit locks.
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import directed_hausdorff, pdist

from core.errors import IoError, NoCycleDetectedError
from core.fold_models import TrajectorySet

DIAMETER_FLOOR = 1e-12
SVG_SIZE = 480
SVG_MARGIN = 40
SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_FOLD_COLUMNS = {
    4: {"left": (0, 1), "right": (2, 3)},
    8: {"left": (0, 1), "right": (4, 5)},
}


def _columns(traj: TrajectorySet, fold: str) -> Tuple[int, int]:
    if fold not in ("left", "right"):
        raise ValueError(f"fold must be 'left' or 'right', got {fold!r}")
    try:
        return _FOLD_COLUMNS[traj.states.shape[1]][fold]
    except KeyError:
        raise ValueError(f"Unsupported state dimension {traj.states.shape[1]}")


def phase_portrait(traj: TrajectorySet, fold: str = "left") -> np.ndarray:
    """Chronological (x, v) pairs of one fold"""
    ix, iv = _columns(traj, fold)
    return np.column_stack((traj.states[:, ix], traj.states[:, iv]))


def upward_crossings(x: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Indices i with x[i] < 0 <= x[i+1] and the interpolated fractional positions"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        return np.zeros(0, dtype=int), np.zeros(0)
    idx = np.nonzero((x[:-1] < 0.0) & (x[1:] >= 0.0))[0]
    frac = -x[idx] / (x[idx + 1] - x[idx])
    return idx, idx + frac


def polygon_area(points: np.ndarray) -> float:
    """Absolute shoelace area of a closed polygon"""
    x, y = points[:, 0], points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def _tail(portrait: np.ndarray, tail_fraction: float) -> np.ndarray:
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError(f"tail_fraction must be in (0, 1], got {tail_fraction}")
    n = portrait.shape[0]
    start = n - int(math.ceil(tail_fraction * n))
    return portrait[start:]


def detect_cycles(portrait: np.ndarray, tail_fraction: float = 1.0) -> List[np.ndarray]:
    """Split the tail of a portrait into full cycles between upward crossings"""
    tail = _tail(np.asarray(portrait, dtype=np.float64), tail_fraction)
    idx, _ = upward_crossings(tail[:, 0])
    return [tail[a + 1:b + 1] for a, b in zip(idx[:-1], idx[1:])]


def limit_cycle_area(portrait: np.ndarray, tail_fraction: float = 0.5) -> float:
    cycles = detect_cycles(portrait, tail_fraction)
    if not cycles:
        raise NoCycleDetectedError("No full cycle in the analysed tail of the portrait")
    return polygon_area(cycles[-1])


def asymmetry_index(traj: TrajectorySet) -> float:
    """RMS(x_l − x_r) / (RMS(x_l) + RMS(x_r)) over the last half of the steps"""
    il, _ = _columns(traj, "left")
    ir, _ = _columns(traj, "right")
    half = traj.states[traj.states.shape[0] // 2:]
    x_l, x_r = half[:, il], half[:, ir]

    def rms(v):
        return float(np.sqrt(np.mean(v * v))) if v.size else 0.0

    return rms(x_l - x_r) / (rms(x_l) + rms(x_r) + 1e-12)


def _hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])


def _diameter(points: np.ndarray) -> float:
    if points.shape[0] < 2:
        return 0.0
    return float(np.max(pdist(points)))


def cycle_variability(portrait: np.ndarray, tail_fraction: float = 0.5) -> float:
    """Mean Hausdorff distance between consecutive cycles over mean cycle diameter"""
    cycles = detect_cycles(portrait, tail_fraction)
    if len(cycles) < 2:
        raise NoCycleDetectedError(f"Need at least 2 cycles, found {len(cycles)}")
    distances = [_hausdorff(a, b) for a, b in zip(cycles[:-1], cycles[1:])]
    diameter = float(np.mean([_diameter(c) for c in cycles]))
    return float(np.mean(distances)) / max(diameter, DIAMETER_FLOOR)


def extract_phase_features(traj: TrajectorySet, tail_fraction: float = 0.5) -> Dict[str, Optional[float]]:
    """Phase-space feature set; features without a detectable cycle are None"""
    features: Dict[str, Optional[float]] = {}
    variability = []
    for fold, suffix in (("left", "l"), ("right", "r")):
        portrait = phase_portrait(traj, fold)
        try:
            features[f"limit_cycle_area_{suffix}"] = limit_cycle_area(portrait, tail_fraction)
        except NoCycleDetectedError:
            features[f"limit_cycle_area_{suffix}"] = None
        try:
            variability.append(cycle_variability(portrait, tail_fraction))
        except NoCycleDetectedError:
            pass
    features["asymmetry_index"] = asymmetry_index(traj)
    features["cycle_variability"] = float(np.mean(variability)) if variability else None
    return features


# ---------------------------------------------------------------------------
# SVG rendering
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.4f}"


def portraits_to_svg(portraits: Sequence[np.ndarray], labels: Optional[Sequence[str]] = None) -> str:
    if not portraits:
        raise ValueError("render_svg needs at least one portrait")
    labels = list(labels) if labels is not None else [f"portrait {i}" for i in range(len(portraits))]
    if len(labels) != len(portraits):
        raise ValueError("labels and portraits differ in length")

    pts = [np.asarray(p, dtype=np.float64) for p in portraits]
    stacked = np.vstack(pts)
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    span = np.where(hi - lo > 0.0, hi - lo, 1.0)
    inner = SVG_SIZE - 2 * SVG_MARGIN

    def to_px(p: np.ndarray) -> np.ndarray:
        x = SVG_MARGIN + (p[:, 0] - lo[0]) / span[0] * inner
        y = SVG_SIZE - SVG_MARGIN - (p[:, 1] - lo[1]) / span[1] * inner
        return np.column_stack((x, y))

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>',
        # axes: displacement (x) horizontal, velocity (v) vertical
        f'<line id="axis-x" x1="{SVG_MARGIN}" y1="{SVG_SIZE - SVG_MARGIN}" x2="{SVG_SIZE - SVG_MARGIN}" y2="{SVG_SIZE - SVG_MARGIN}" stroke="black"/>',
        f'<line id="axis-v" x1="{SVG_MARGIN}" y1="{SVG_MARGIN}" x2="{SVG_MARGIN}" y2="{SVG_SIZE - SVG_MARGIN}" stroke="black"/>',
        f'<text x="{SVG_SIZE // 2}" y="{SVG_SIZE - 10}" font-size="12" text-anchor="middle">displacement x [{_fmt(lo[0])}, {_fmt(hi[0])}]</text>',
        f'<text x="12" y="{SVG_SIZE // 2}" font-size="12" transform="rotate(-90 12 {SVG_SIZE // 2})" text-anchor="middle">velocity v [{_fmt(lo[1])}, {_fmt(hi[1])}]</text>',
    ]
    for i, (p, label) in enumerate(zip(pts, labels)):
        color = SVG_COLORS[i % len(SVG_COLORS)]
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in to_px(p))
        lines.append(f'<polyline id="portrait-{i}" fill="none" stroke="{color}" stroke-width="1" points="{coords}"/>')
        ly = SVG_MARGIN + 16 * i
        lines.append(f'<line x1="{SVG_SIZE - 150}" y1="{ly}" x2="{SVG_SIZE - 130}" y2="{ly}" stroke="{color}"/>')
        lines.append(f'<text x="{SVG_SIZE - 125}" y="{ly + 4}" font-size="11">{label}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_svg(portraits: Sequence[np.ndarray], path: str, labels: Optional[Sequence[str]] = None) -> str:
    """Write one polyline per portrait to a standalone SVG; output bytes are deterministic"""
    svg = portraits_to_svg(portraits, labels)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(svg)
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e
    return path
