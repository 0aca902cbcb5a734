"""Random tiny detection corpora for oracle comparisons."""

from __future__ import annotations

import random

TIE_CONFIDENCES = (0.3, 0.5, 0.7)


def random_corpus(seed: int, max_images: int = 5, max_boxes: int = 6, n_classes: int = 3):
    """Lists of (class, conf, box) detections and (class, box) ground truth per image.

    Detections are often jittered copies of ground truth so that matches at
    several IoU levels occur; some confidences are drawn from a small set to
    exercise ranking ties.
    """
    rnd = random.Random(seed)
    dets, gts = [], []
    for _ in range(rnd.randint(1, max_images)):
        g = []
        for _ in range(rnd.randint(0, max_boxes)):
            box = (rnd.uniform(0.1, 0.9), rnd.uniform(0.1, 0.9), rnd.uniform(0.05, 0.5), rnd.uniform(0.05, 0.5))
            g.append((rnd.randrange(n_classes), box))
        d = []
        for _ in range(rnd.randint(0, max_boxes)):
            if g and rnd.random() < 0.7:
                cls, (cx, cy, w, h) = rnd.choice(g)
                if rnd.random() < 0.2:
                    cls = rnd.randrange(n_classes)
                j = rnd.uniform(0.0, 0.3)
                box = (min(max(cx + rnd.uniform(-j, j) * w, 0.0), 1.0),
                       min(max(cy + rnd.uniform(-j, j) * h, 0.0), 1.0),
                       min(w * rnd.uniform(1 - j, 1 + j), 1.0), min(h * rnd.uniform(1 - j, 1 + j), 1.0))
            else:
                cls = rnd.randrange(n_classes)
                box = (rnd.uniform(0.1, 0.9), rnd.uniform(0.1, 0.9), rnd.uniform(0.05, 0.5), rnd.uniform(0.05, 0.5))
            conf = rnd.choice(TIE_CONFIDENCES) if rnd.random() < 0.3 else rnd.random()
            d.append((cls, conf, box))
        dets.append(d)
        gts.append(g)
    return dets, gts
