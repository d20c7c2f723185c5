"""Brute-force reference implementations, independent of the detbench code paths."""

from fractions import Fraction

from detbench.annotations import BoundingBox, Detection, GroundTruth


def frac_corners(box):
    cx, cy, w, h = (Fraction(v) for v in (box.cx, box.cy, box.w, box.h))
    return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


def exact_iou(a, b):
    ax0, ay0, ax1, ay1 = frac_corners(a)
    bx0, by0, bx1, by1 = frac_corners(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return Fraction(0)
    inter = iw * ih
    return inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)


def cell_iou(a, b):
    """IoU of integer rectangles by counting unit cells."""
    ca = {(x, y) for x in range(a[0], a[2]) for y in range(a[1], a[3])}
    cb = {(x, y) for x in range(b[0], b[2]) for y in range(b[1], b[3])}
    return Fraction(len(ca & cb), len(ca | cb))


def oracle_ap(images, threshold=Fraction(1, 2)):
    """AP from an explicit PR table.

    ``images`` is a list of ``(gts, dets)``.  Detections are ranked by
    confidence (ties: image order, then input order); each one greedily takes
    the free ground truth with the largest IoU if that IoU reaches the
    threshold.  Interpolated precision at each distinct recall level is the
    best precision at that recall or beyond.
    """
    ranked = []
    for img_idx, (gts, dets) in enumerate(images):
        for det_idx, d in enumerate(dets):
            ranked.append((-Fraction(d.confidence), img_idx, det_idx))
    total = sum(len(g) for g, _ in images)
    if total == 0:
        raise ZeroDivisionError
    # per-image greedy matching in descending confidence (stable)
    flags = {}
    for img_idx, (gts, dets) in enumerate(images):
        free = list(range(len(gts)))
        order = sorted(range(len(dets)), key=lambda i: (-Fraction(dets[i].confidence), i))
        for i in order:
            scored = [(exact_iou(dets[i].box, gts[j].box), -j) for j in free if gts[j].class_id == dets[i].class_id]
            if scored:
                best_iou, neg_j = max(scored)
                if best_iou >= threshold:
                    free.remove(-neg_j)
                    flags[(img_idx, i)] = True
                    continue
            flags[(img_idx, i)] = False
    table = []
    tp = fp = 0
    for _, img_idx, det_idx in sorted(ranked):
        if flags[(img_idx, det_idx)]:
            tp += 1
        else:
            fp += 1
        table.append((Fraction(tp, total), Fraction(tp, tp + fp)))
    levels = sorted({r for r, _ in table if r > 0})
    ap = Fraction(0)
    prev = Fraction(0)
    for r in levels:
        p_interp = max(p for rr, p in table if rr >= r)
        ap += (r - prev) * p_interp
        prev = r
    return ap


def random_instance(rng, max_images=5, max_gts=4, max_dets=6, classes=1):
    """Random (gts, dets) images with boxes on a dyadic grid.

    Corner coordinates and areas are then exact in binary floating point, so
    an IoU of exactly 1/2 compares equal to the threshold in both the float
    code and the rational oracle.
    """

    def box():
        w = rng.integers(1, 9) / 16
        h = rng.integers(1, 9) / 16
        cx = w / 2 + rng.integers(0, int((1 - w) * 32) + 1) / 32
        cy = h / 2 + rng.integers(0, int((1 - h) * 32) + 1) / 32
        return BoundingBox(min(cx, 1 - w / 2), min(cy, 1 - h / 2), w, h)

    images = []
    for _ in range(rng.integers(1, max_images + 1)):
        gts = [GroundTruth(int(rng.integers(classes)), box()) for _ in range(rng.integers(0, max_gts + 1))]
        dets = []
        for _ in range(rng.integers(0, max_dets + 1)):
            if gts and rng.random() < 0.6:
                # jitter a GT so matches actually happen
                g = gts[rng.integers(len(gts))].box
                b = g if rng.random() < 0.5 else box()
            else:
                b = box()
            conf = float(rng.choice([0.1, 0.25, 0.5, 0.75, 0.9, 1.0]))
            dets.append(Detection(int(rng.integers(classes)), b, conf))
        images.append((gts, dets))
    return images
