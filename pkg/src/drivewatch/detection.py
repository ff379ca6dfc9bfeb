"""Per-frame object evidence and track association.

Two sources of boxes: a rigid HOG template scored densely over an image
pyramid, and externally produced detections ingested from JSONL. Greedy IoU
matching strings the per-frame boxes into tracks for the temporal features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .camera_geometry import WorldPoint
from .errors import DetectionFileError, InvalidInputError
from .imagekit import ImageF32, Pyramid

KNOWN_CLASSES = ("car", "person")

DEFAULT_IOU_THRESHOLD = 0.3
DEFAULT_MAX_GAP = 5


@dataclass(frozen=True)
class HogParams:
    cell_size: int = 8
    bins: int = 9  # unsigned orientations over [0, 180)
    block_size: int = 2  # cells per block side
    block_stride: int = 1  # cells
    clip: float = 0.2

    def __post_init__(self):
        if self.cell_size < 2:
            raise InvalidInputError("cell_size must be >= 2")
        if self.bins < 2:
            raise InvalidInputError("bins must be >= 2")
        if self.block_size < 1 or self.block_stride < 1:
            raise InvalidInputError("block layout must be positive")
        if self.clip <= 0:
            raise InvalidInputError("clip must be positive")


@dataclass(frozen=True)
class Detection:
    frame_index: int
    class_name: str
    bbox: tuple[float, float, float, float]  # x, y, width, height (px)
    score: float

    def __post_init__(self):
        if self.frame_index < 0:
            raise InvalidInputError("frame_index must be >= 0")
        if self.class_name not in KNOWN_CLASSES:
            raise InvalidInputError(f"unknown class {self.class_name!r}")
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise InvalidInputError("bbox width and height must be positive")
        object.__setattr__(self, "bbox", (float(x), float(y), float(w), float(h)))


@dataclass
class TrackObservation:
    frame_index: int
    bbox: tuple[float, float, float, float]
    ground: WorldPoint | None = None
    distance: float | None = None
    lane_offset: float | None = None


@dataclass
class Track:
    """A persistent object identity; history is strictly increasing in frame."""

    track_id: int
    class_name: str
    history: list[TrackObservation] = field(default_factory=list)

    @property
    def last_seen(self) -> int:
        return self.history[-1].frame_index

    @property
    def last_bbox(self) -> tuple[float, float, float, float]:
        return self.history[-1].bbox

    def append(self, obs: TrackObservation) -> None:
        if self.history and obs.frame_index <= self.history[-1].frame_index:
            raise InvalidInputError("track history must increase in frame_index")
        self.history.append(obs)


def iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def hog_features(window: ImageF32, params: HogParams) -> np.ndarray:
    """Block-normalized histogram-of-oriented-gradients descriptor.

    Centered-difference gradients, per-cell orientation histograms with a
    bilinear vote between the two nearest unsigned bins, then per-block L2
    normalization with clamping and renormalization. Block sub-vectors are
    concatenated row-major: blocks, cells within block, bins.
    """
    if window.channels != 1:
        raise InvalidInputError("hog_features expects a single-channel window")
    cs = params.cell_size
    if window.width % cs or window.height % cs:
        raise InvalidInputError(
            f"window {window.width}x{window.height} not divisible by cell_size {cs}"
        )
    cells = _cell_histograms(window.pixels.astype(np.float64), params)
    return _normalized_blocks(cells, params).ravel()


def _cell_histograms(data: np.ndarray, params: HogParams) -> np.ndarray:
    """(cells_y, cells_x, bins) orientation histogram grid."""
    cs = params.cell_size
    nbins = params.bins
    k = np.array([-1.0, 0.0, 1.0])
    gx = ndimage.correlate1d(data, k, axis=1, mode="nearest")
    gy = ndimage.correlate1d(data, k, axis=0, mode="nearest")
    magnitude = np.hypot(gx, gy)
    angle = np.arctan2(gy, gx) % np.pi  # unsigned

    bin_width = np.pi / nbins
    pos = angle / bin_width - 0.5
    lower = np.floor(pos).astype(np.int64)
    frac = pos - lower
    lower_bin = np.mod(lower, nbins)
    upper_bin = np.mod(lower + 1, nbins)

    h, w = data.shape
    cy, cx = h // cs, w // cs
    cell_row = (np.arange(h) // cs)[:, None] * np.ones(w, dtype=np.int64)[None, :]
    cell_col = np.ones(h, dtype=np.int64)[:, None] * (np.arange(w) // cs)[None, :]
    flat_cell = (cell_row * cx + cell_col).ravel()

    hist = np.zeros(cy * cx * nbins, dtype=np.float64)
    np.add.at(hist, flat_cell * nbins + lower_bin.ravel(), (magnitude * (1.0 - frac)).ravel())
    np.add.at(hist, flat_cell * nbins + upper_bin.ravel(), (magnitude * frac).ravel())
    return hist.reshape(cy, cx, nbins)


def _normalized_blocks(cells: np.ndarray, params: HogParams) -> np.ndarray:
    """(blocks_y, blocks_x, block_size^2 * bins) L2-hys normalized blocks."""
    bs, stride = params.block_size, params.block_stride
    cy, cx, nbins = cells.shape
    by = (cy - bs) // stride + 1
    bx = (cx - bs) // stride + 1
    if by < 1 or bx < 1:
        raise InvalidInputError("window smaller than one block")
    eps = 1e-6
    out = np.empty((by, bx, bs * bs * nbins), dtype=np.float64)
    for i in range(by):
        for j in range(bx):
            vec = cells[i * stride : i * stride + bs, j * stride : j * stride + bs].ravel()
            vec = vec / np.sqrt(vec @ vec + eps * eps)
            vec = np.minimum(vec, params.clip)
            vec = vec / np.sqrt(vec @ vec + eps * eps)
            out[i, j] = vec
    return out


@dataclass(frozen=True)
class Template:
    """Rigid detector template over the HOG block grid of a window."""

    weights: np.ndarray  # (blocks_y, blocks_x, block_size^2 * bins)
    bias: float
    cells_x: int
    cells_y: int
    class_name: str = "car"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 3:
            raise InvalidInputError("template weights must be a 3D block grid")
        w = np.ascontiguousarray(w)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def window_size(self, params: HogParams) -> tuple[int, int]:
        return self.cells_x * params.cell_size, self.cells_y * params.cell_size


def template_from_windows(
    windows: list[ImageF32], params: HogParams, bias: float = 0.0, class_name: str = "car"
) -> Template:
    """Average the HOG block grids of example windows into a template."""
    if not windows:
        raise InvalidInputError("need at least one example window")
    cs = params.cell_size
    cx, cy = windows[0].width // cs, windows[0].height // cs
    acc = None
    for win in windows:
        grid = _normalized_blocks(_cell_histograms(win.pixels.astype(np.float64), params), params)
        acc = grid if acc is None else acc + grid
    return Template(acc / len(windows), bias, cx, cy, class_name)


def score_template(
    pyramid: Pyramid,
    template: Template,
    params: HogParams,
    score_threshold: float,
    frame_index: int = 0,
) -> list[Detection]:
    """Slide the template over every pyramid level's HOG block grid.

    Windows scoring above the threshold become detections in level-0 pixel
    coordinates; greedy non-maximum suppression at IoU 0.5 prunes overlaps.
    """
    base = pyramid.levels[0]
    tw_blocks_y, tw_blocks_x, _ = template.weights.shape
    win_w, win_h = template.window_size(params)

    coarsest = pyramid.levels[-1]
    if (
        coarsest.width // params.cell_size < template.cells_x
        or coarsest.height // params.cell_size < template.cells_y
    ):
        raise InvalidInputError("template larger than the coarsest pyramid level")

    raw: list[Detection] = []
    for level_img in pyramid.levels:
        cells = _cell_histograms(level_img.pixels.astype(np.float64), params)
        blocks = _normalized_blocks(cells, params)
        by, bx, blen = blocks.shape
        ny = by - tw_blocks_y + 1
        nx = bx - tw_blocks_x + 1
        if ny < 1 or nx < 1:
            continue
        windows = np.lib.stride_tricks.sliding_window_view(
            blocks, (tw_blocks_y, tw_blocks_x, blen)
        )[:, :, 0]
        scores = np.tensordot(windows, template.weights, axes=3) + template.bias

        scale_x = base.width / level_img.width
        scale_y = base.height / level_img.height
        ys, xs = np.nonzero(scores > score_threshold)
        for wy, wx in zip(ys, xs):
            cs = params.cell_size
            bbox = (
                wx * cs * scale_x,
                wy * cs * scale_y,
                win_w * scale_x,
                win_h * scale_y,
            )
            raw.append(
                Detection(frame_index, template.class_name, bbox, float(scores[wy, wx]))
            )

    return non_max_suppression(raw, 0.5)


def non_max_suppression(detections: list[Detection], iou_threshold: float) -> list[Detection]:
    """Keep highest-scoring boxes, dropping overlaps at or above the threshold."""
    ordered = sorted(detections, key=lambda d: (-d.score, d.bbox[0], d.bbox[1]))
    kept: list[Detection] = []
    for det in ordered:
        if all(iou(det.bbox, k.bbox) < iou_threshold for k in kept):
            kept.append(det)
    return kept


def save_template(path, template: Template) -> None:
    """Text format: 'cells_x cells_y bins bias' then one weight per line."""
    with open(path, "w", encoding="utf-8") as fh:
        bins = template.weights.shape[2]
        fh.write(f"{template.cells_x} {template.cells_y} {bins} {float(template.bias)!r}\n")
        for value in template.weights.ravel():
            fh.write(f"{float(value)!r}\n")


def load_template(path, params: HogParams, class_name: str = "car") -> Template:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise InvalidInputError("template header must be 'cells_x cells_y bins bias'")
        cells_x, cells_y, blen = int(header[0]), int(header[1]), int(header[2])
        bias = float(header[3])
        values = [float(line) for line in fh if line.strip()]
    bs, stride = params.block_size, params.block_stride
    by = (cells_y - bs) // stride + 1
    bx = (cells_x - bs) // stride + 1
    expected = by * bx * blen
    if len(values) != expected:
        raise InvalidInputError(f"template has {len(values)} weights, expected {expected}")
    weights = np.asarray(values, dtype=np.float64).reshape(by, bx, blen)
    return Template(weights, bias, cells_x, cells_y, class_name)


_REQUIRED_FIELDS = ("frame", "class", "x", "y", "width", "height", "score")


def _parse_detection_line(line_no: int, line: str) -> Detection:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DetectionFileError(line_no, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(record, dict):
        raise DetectionFileError(line_no, "record must be a JSON object")
    missing = [k for k in _REQUIRED_FIELDS if k not in record]
    if missing:
        raise DetectionFileError(line_no, f"missing fields {missing}")
    try:
        return Detection(
            frame_index=int(record["frame"]),
            class_name=str(record["class"]),
            bbox=(
                float(record["x"]),
                float(record["y"]),
                float(record["width"]),
                float(record["height"]),
            ),
            score=float(record["score"]),
        )
    except (TypeError, ValueError, InvalidInputError) as exc:
        raise DetectionFileError(line_no, str(exc)) from exc


def load_detections(path) -> dict[int, list[Detection]]:
    """Parse a detections JSONL file, grouped by frame index.

    The first malformed or invalid line raises DetectionFileError naming it.
    """
    by_frame: dict[int, list[Detection]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            det = _parse_detection_line(line_no, line)
            by_frame.setdefault(det.frame_index, []).append(det)
    return by_frame


def load_detections_tolerant(path) -> tuple[dict[int, list[Detection]], list[DetectionFileError]]:
    """Like load_detections but collects per-line errors instead of raising."""
    by_frame: dict[int, list[Detection]] = {}
    errors: list[DetectionFileError] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                det = _parse_detection_line(line_no, line)
            except DetectionFileError as exc:
                errors.append(exc)
                continue
            by_frame.setdefault(det.frame_index, []).append(det)
    return by_frame, errors


def associate_tracks(
    tracks: list[Track],
    detections: list[Detection],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    max_gap: int = DEFAULT_MAX_GAP,
) -> list[Track]:
    """Greedy one-to-one IoU matching of same-class detections to tracks.

    Tracks unseen for more than ``max_gap`` frames are closed (kept in the
    list for their history, but no longer eligible). Unmatched detections
    open fresh tracks. The list is updated in place and returned.
    """
    if not detections:
        return tracks
    frame = detections[0].frame_index
    if any(d.frame_index != frame for d in detections):
        raise InvalidInputError("detections passed together must share one frame_index")

    open_tracks = [
        t for t in tracks if t.history and frame - t.last_seen <= max_gap and t.last_seen < frame
    ]
    pairs = []
    for ti, track in enumerate(open_tracks):
        for di, det in enumerate(detections):
            if det.class_name != track.class_name:
                continue
            overlap = iou(track.last_bbox, det.bbox)
            if overlap >= iou_threshold:
                pairs.append((overlap, ti, di))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))

    used_tracks: set[int] = set()
    used_dets: set[int] = set()
    for overlap, ti, di in pairs:
        if ti in used_tracks or di in used_dets:
            continue
        used_tracks.add(ti)
        used_dets.add(di)
        open_tracks[ti].append(TrackObservation(frame, detections[di].bbox))

    next_id = max((t.track_id for t in tracks), default=-1) + 1
    for di, det in enumerate(detections):
        if di in used_dets:
            continue
        track = Track(next_id, det.class_name)
        track.append(TrackObservation(frame, det.bbox))
        tracks.append(track)
        next_id += 1
    return tracks
