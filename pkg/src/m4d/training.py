"""SGD with the step-decay schedule, synthetic 4D data, and evaluation metrics."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import geometry, model as model_mod


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class SgdState:
    lr: float = 0.01
    momentum: float = 0.9
    decay_epochs: tuple = (20, 30)
    decay_factor: float = 0.1
    epoch: int = 0
    velocities: dict = field(default_factory=dict)


def lr_at_epoch(e, state):
    if e < 0:
        raise ValueError("epoch must be non-negative")
    decays = sum(e >= de for de in state.decay_epochs)
    return state.lr * state.decay_factor ** decays


def sgd_step(named_params, state):
    """v <- mu*v + g; p <- p - lr*v. Parameters without grads are skipped."""
    lr = lr_at_epoch(state.epoch, state)
    for name, p in named_params:
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        v = state.velocities.get(name)
        if v is None:
            v = state.velocities[name] = np.zeros_like(p.data)
        v *= state.momentum
        v += p.grad
        p.data -= lr * v


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticSpec:
    seed: int = 0
    classes: int = 2
    points: int = 128
    frames: int = 8
    noise: float = 0.01
    base_rate: float = 0.35     # rad/frame for rotations, units/frame otherwise
    label_kind: str = "video"   # video | frame | point


def _base_cloud(rng, n):
    """Ring-like cloud so rotation about z moves every point."""
    r = rng.uniform(0.4, 1.0, n)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    z = rng.uniform(-0.5, 0.5, n)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _motion(cls, rate):
    """Displacement rule for one class; classes 0/1 differ only in spin sign."""
    if cls in (0, 1):
        sign = -1.0 if cls == 0 else 1.0
        return lambda pts, t: pts @ _rot_z(sign * rate * t).T
    if cls in (2, 3):
        sign = 1.0 if cls == 2 else -1.0
        return lambda pts, t: pts + np.array([sign * 0.3 * rate * t, 0.0, 0.0])
    sign = 1.0 if cls == 4 else -1.0
    return lambda pts, t: pts + np.array(
        [0.0, 0.0, sign * 0.5 * np.sin(rate * t)])


def generate_synthetic(spec, cls=None):
    """One deterministic video; class defaults to a seeded draw."""
    if spec.classes < 1 or spec.classes > 6:
        raise ValueError("supported class counts are 1..6")
    rng = np.random.default_rng(spec.seed)
    base = _base_cloud(rng, spec.points)
    noise = rng.normal(0.0, 1.0, (spec.frames, spec.points, 3))
    if cls is None:
        cls = int(rng.integers(spec.classes))

    T, N = spec.frames, spec.points
    if spec.label_kind == "video":
        move = _motion(cls, spec.base_rate)
        coords = np.stack([move(base, t) for t in range(T)])
        labels = cls
    elif spec.label_kind == "frame":
        # alternating rotation direction over 2-4 segments, labels follow
        nseg = int(rng.integers(2, 5))
        cuts = np.sort(rng.choice(np.arange(1, T), size=nseg - 1, replace=False))
        bounds = np.concatenate([[0], cuts, [T]])
        first = int(rng.integers(2))
        labels = np.empty(T, dtype=np.int64)
        coords = np.empty((T, N, 3))
        pts = base
        for s in range(nseg):
            seg_cls = (first + s) % 2
            for t in range(bounds[s], bounds[s + 1]):
                step = _motion(seg_cls, spec.base_rate)(pts, 1)
                coords[t] = pts
                pts = step
                labels[t] = seg_cls
    elif spec.label_kind == "point":
        moving = np.zeros(N, dtype=np.int64)
        moving[rng.permutation(N)[: N // 2]] = 1
        move = _motion(cls % 2, spec.base_rate)
        coords = np.stack([np.where(moving[:, None] == 1, move(base, t), base)
                           for t in range(T)])
        labels = np.tile(moving, (T, 1))
    else:
        raise ValueError(f"unknown label_kind {spec.label_kind!r}")

    coords = coords + spec.noise * noise
    kind = spec.label_kind
    return geometry.PointCloudVideo(coords=coords, labels=labels, label_kind=kind)


def make_dataset(spec, count):
    """`count` videos, classes round-robin, bit-reproducible from spec.seed."""
    from dataclasses import replace
    videos = []
    for i in range(count):
        sub = replace(spec, seed=spec.seed * 100003 + i)
        cls = i % spec.classes if spec.label_kind == "video" else None
        videos.append(generate_synthetic(sub, cls=cls))
    return videos


# ---------------------------------------------------------------------------
# metrics


def metric_accuracy(pred, truth):
    pred, truth = np.asarray(pred).reshape(-1), np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError("prediction/label length mismatch")
    return 100.0 * np.mean(pred == truth)


def metric_miou(pred, truth, classes):
    """Mean over classes of TP/(TP+FP+FN); classes absent from both excluded."""
    pred, truth = np.asarray(pred).reshape(-1), np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError("prediction/label length mismatch")
    ious = per_class_iou(pred, truth, classes)
    vals = [v for v in ious.values() if v is not None]
    return 100.0 * float(np.mean(vals))


def per_class_iou(pred, truth, classes):
    """class -> IoU in [0,1], or None when the class appears in neither."""
    out = OrderedDict()
    for c in range(classes):
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        out[c] = None if tp + fp + fn == 0 else tp / (tp + fp + fn)
    return out


def label_segments(labels):
    """Collapse a label sequence into (label, start, end_exclusive) runs."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label sequence")
    cuts = np.flatnonzero(np.diff(labels)) + 1
    bounds = np.concatenate([[0], cuts, [labels.size]])
    return [(int(labels[bounds[i]]), int(bounds[i]), int(bounds[i + 1]))
            for i in range(len(bounds) - 1)]


def _levenshtein(a, b):
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def metric_edit_score(pred, truth):
    """100 * (1 - Levenshtein(segments) / max segment count)."""
    sp = [s[0] for s in label_segments(pred)]
    st = [s[0] for s in label_segments(truth)]
    return 100.0 * (1.0 - _levenshtein(sp, st) / max(len(sp), len(st)))


def segmental_tp_fp_fn(pred, truth, tau):
    """Greedy best-IoU matching of predicted to true segments at threshold tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"invalid overlap threshold {tau}")
    ps = label_segments(pred)
    ts = label_segments(truth)
    used = [False] * len(ts)
    tp = fp = 0
    for lbl, s0, s1 in ps:
        best, best_j = 0.0, -1
        for j, (tl, t0, t1) in enumerate(ts):
            if tl != lbl:
                continue
            inter = max(0, min(s1, t1) - max(s0, t0))
            union = max(s1, t1) - min(s0, t0)
            iou = inter / union
            if iou > best:
                best, best_j = iou, j
        if best >= tau and best_j >= 0 and not used[best_j]:
            tp += 1
            used[best_j] = True
        else:
            fp += 1
    fn = used.count(False)
    return tp, fp, fn


def metric_segmental_f1(pred, truth, tau):
    tp, fp, fn = segmental_tp_fp_fn(pred, truth, tau)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    if prec + rec == 0:
        return 0.0
    return 100.0 * 2.0 * prec * rec / (prec + rec)


# ---------------------------------------------------------------------------
# training / evaluation loops


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _batch_loss(model, tbs, class_weights):
    cfg = model.config
    feats = model.encode(tbs)
    if cfg.task == "recognition":
        logits = model.classify_video(feats)
        targets = np.array([tb.video.labels for tb in tbs])
        return model_mod.cross_entropy(logits, targets), logits.data, targets
    if cfg.task == "action_seg":
        T = tbs[0].video.T
        logits = model.segment_frames(feats, T)
        targets = np.stack([tb.video.labels for tb in tbs])
        return model_mod.cross_entropy(logits, targets), logits.data, targets
    per_video = model.segment_points(feats, tbs)
    total = None
    preds = []
    targets = np.stack([tb.video.labels for tb in tbs])
    for lv, tb in zip(per_video, tbs):
        loss_v = model_mod.cross_entropy(lv, tb.video.labels, class_weights)
        total = loss_v if total is None else ad.add(total, loss_v)
        preds.append(lv.data)
    return ad.mul(total, 1.0 / len(tbs)), np.stack(preds), targets


def train_model(config, videos, log_lines=None, early_stop_acc=None):
    """Full training loop; returns (model, sgd_state). Deterministic per seed."""
    model = model_mod.Mamba4DModel(config, c_in=videos[0].C)
    tbs = [model.prepare_video(v) for v in videos]
    class_weights = None
    if config.task == "semantic_seg":
        labels = np.concatenate([np.asarray(v.labels).reshape(-1) for v in videos])
        class_weights = model_mod.inverse_frequency_weights(labels, config.classes)
    state = SgdState(lr=config.lr, momentum=config.momentum,
                     decay_epochs=tuple(config.decay_epochs),
                     decay_factor=config.decay_factor)
    order_rng = np.random.default_rng(config.seed + 1)
    params = list(model.named_params())
    for epoch in range(config.epochs):
        state.epoch = epoch
        order = order_rng.permutation(len(tbs))
        losses, correct, total = [], 0, 0
        for i0 in range(0, len(order), config.batch_size):
            batch = [tbs[j] for j in order[i0:i0 + config.batch_size]]
            for _, p in params:
                p.zero_grad()
            with ad.Tape() as tape:
                loss, logits, targets = _batch_loss(model, batch, class_weights)
                tape.backward(loss)
            sgd_step(params, state)
            losses.append(float(loss.data))
            pred = logits.argmax(axis=-1)
            correct += int(np.sum(pred == targets))
            total += int(np.asarray(targets).size)
        acc = 100.0 * correct / total
        if log_lines is not None:
            log_lines.append(f"metric=train_loss value={np.mean(losses):.6f} epoch={epoch}")
            log_lines.append(f"metric=train_accuracy value={acc:.6f} epoch={epoch}")
        if early_stop_acc is not None and acc >= early_stop_acc:
            break
    return model, state


def predict_video_class(model, tb_or_video, clip_len=None):
    """Class probabilities for one video; long videos are split into
    equal-size clips and the clip probabilities averaged."""
    video = tb_or_video.video if hasattr(tb_or_video, "video") else tb_or_video
    if clip_len is not None and video.T > clip_len:
        probs = []
        for c0 in range(0, video.T - clip_len + 1, clip_len):
            clip = geometry.PointCloudVideo(
                coords=video.coords[c0:c0 + clip_len],
                feats=None if video.feats is None else video.feats[c0:c0 + clip_len],
                labels=video.labels, label_kind=video.label_kind)
            probs.append(predict_video_class(model, clip))
        return np.mean(probs, axis=0)
    tb = tb_or_video if hasattr(tb_or_video, "video") else model.prepare_video(video)
    logits = model.classify_video(model.encode([tb]))
    return _softmax(logits.data[0])


def evaluate(model, videos, clip_len=None):
    """Task-appropriate metric set as an ordered name -> value mapping."""
    cfg = model.config
    out = OrderedDict()
    if cfg.task == "recognition":
        preds = [int(np.argmax(predict_video_class(model, v, clip_len)))
                 for v in videos]
        truth = [v.labels for v in videos]
        out["accuracy"] = metric_accuracy(preds, truth)
        return out
    tbs = [model.prepare_video(v) for v in videos]
    if cfg.task == "action_seg":
        preds, truths = [], []
        for tb in tbs:
            logits = model.segment_frames(model.encode([tb]), tb.video.T)
            preds.append(logits.data[0].argmax(axis=-1))
            truths.append(np.asarray(tb.video.labels))
        out["accuracy"] = metric_accuracy(np.concatenate(preds), np.concatenate(truths))
        out["edit"] = float(np.mean([metric_edit_score(p, t)
                                     for p, t in zip(preds, truths)]))
        for tau in (0.10, 0.25, 0.50):
            tp = fp = fn = 0
            for p, t in zip(preds, truths):
                a, b, c = segmental_tp_fp_fn(p, t, tau)
                tp, fp, fn = tp + a, fp + b, fn + c
            prec = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            f1 = 0.0 if prec + rec == 0 else 100.0 * 2 * prec * rec / (prec + rec)
            out[f"f1@{int(tau * 100)}"] = f1
        return out
    # semantic segmentation
    preds, truths = [], []
    for tb in tbs:
        per_video = model.segment_points(model.encode([tb]), [tb])
        preds.append(per_video[0].data.argmax(axis=-1).reshape(-1))
        truths.append(np.asarray(tb.video.labels).reshape(-1))
    pred, truth = np.concatenate(preds), np.concatenate(truths)
    ious = per_class_iou(pred, truth, cfg.classes)
    for c, iou in ious.items():
        if iou is not None:
            out[f"iou_{c}"] = 100.0 * iou
    out["miou"] = metric_miou(pred, truth, cfg.classes)
    return out
