"""Image/latent metrics and a logistic-regression oracle classifier.

The oracle and SSIM stand in for metrics that need pretrained networks;
reports say so in their header.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .training import AdamState, adam_step

SSIM_WINDOW = 7
SUBSTITUTION_NOTE = (
    "oracle_label/oracle_score: logistic-regression oracle replaces CLIP accuracy; "
    "ssim uses a 7x7 uniform window; LPIPS and structure distance are not computed"
)


def _check_pair(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def ssim(a, b, K1: float = 0.01, K2: float = 0.03, data_range: float = 1.0, win: int = SSIM_WINDOW) -> float:
    """Single-scale SSIM, uniform window, sample (co)variances, mean over valid windows."""
    a, b = _check_pair(a, b)
    if a.ndim != 2 or min(a.shape) < win:
        raise ValueError(f"image of shape {a.shape} is smaller than the {win}x{win} window")
    C1, C2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    wa = sliding_window_view(a, (win, win))
    wb = sliding_window_view(b, (win, win))
    n = win * win
    mu_a, mu_b = wa.mean(axis=(2, 3)), wb.mean(axis=(2, 3))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = (da * da).sum(axis=(2, 3)) / (n - 1)
    var_b = (db * db).sum(axis=(2, 3)) / (n - 1)
    cov = (da * db).sum(axis=(2, 3)) / (n - 1)
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a**2 + mu_b**2 + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))


def mse(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, data_range: float = 1.0) -> float:
    """Peak SNR in dB; ``inf`` when the images are identical."""
    e = mse(a, b)
    if e == 0:
        return float("inf")
    return float(10.0 * np.log10(data_range**2 / e))


def rel_displacement(z0, z0_rec) -> float:
    """|z0 - z0'| / |z0|."""
    z0, z0_rec = _check_pair(z0, z0_rec)
    norm = np.linalg.norm(z0)
    if norm == 0:
        raise ValueError("relative displacement undefined for a zero reference latent")
    return float(np.linalg.norm(z0 - z0_rec) / norm)


# -- oracle classifier -------------------------------------------------------


@dataclass
class Classifier:
    weights: np.ndarray  # (D, n_classes)
    bias: np.ndarray  # (n_classes,)
    labels: list[str]
    heldout_accuracy: float = float("nan")

    def probabilities(self, imgs) -> np.ndarray:
        x = np.asarray(imgs, dtype=np.float64).reshape(-1, self.weights.shape[0])
        return _softmax(x @ self.weights + self.bias)


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_oracle(images, labels, seed: int = 0, epochs: int = 300, lr: float = 0.05,
                 l2: float = 1e-3, holdout: float = 0.2) -> Classifier:
    """Multinomial logistic regression over flattened pixels, full-batch Adam."""
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError(f"oracle needs at least 2 labels, got {classes}")
    x = np.asarray(images, dtype=np.float64).reshape(len(labels), -1)
    y = np.array([classes.index(lab) for lab in labels])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    n_hold = int(round(holdout * len(y)))
    hold, fit = order[:n_hold], order[n_hold:]
    onehot = np.eye(len(classes))[y[fit]]
    params = {"w": np.zeros((x.shape[1], len(classes))), "b": np.zeros(len(classes))}
    state = AdamState(lr=lr)
    xf = x[fit]
    for _ in range(epochs):
        p = _softmax(xf @ params["w"] + params["b"])
        r = (p - onehot) / len(fit)
        grads = {"w": xf.T @ r + l2 * params["w"], "b": r.sum(axis=0)}
        params = adam_step(state, params, grads)
    clf = Classifier(params["w"], params["b"], classes)
    if n_hold:
        pred = clf.probabilities(x[hold]).argmax(axis=1)
        clf.heldout_accuracy = float(np.mean(pred == y[hold]))
    return clf


def classify(clf: Classifier, img) -> tuple[str, float]:
    """Argmax label and its probability."""
    p = clf.probabilities(img)[0]
    i = int(p.argmax())
    return clf.labels[i], float(p[i])


def class_score(clf: Classifier, img, label: str) -> float:
    return float(clf.probabilities(img)[0][clf.labels.index(label)])


# -- reports -------------------------------------------------------------------

COLUMNS = ("image_id", "mse", "psnr", "ssim", "rel_displacement", "oracle_label", "oracle_score")


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, image_id, source, recon, clf: Classifier | None = None, latent=None) -> dict:
        """Score one decoded image; ``latent`` (if given) is used for the displacement."""
        source, recon = _check_pair(source, recon)
        label, score = classify(clf, recon) if clf is not None else ("", float("nan"))
        row = {
            "image_id": image_id,
            "mse": mse(source, recon),
            "psnr": psnr(source, recon),
            "ssim": ssim(source, recon),
            "rel_displacement": rel_displacement(source, recon if latent is None else latent),
            "oracle_label": label,
            "oracle_score": score,
        }
        self.rows.append(row)
        return row

    def aggregate(self) -> dict:
        out = {}
        for col in ("mse", "psnr", "ssim", "rel_displacement", "oracle_score"):
            vals = np.array([r[col] for r in self.rows], dtype=np.float64)
            out[f"mean_{col}"] = float(np.mean(vals)) if vals.size else float("nan")
            out[f"median_{col}"] = float(np.median(vals)) if vals.size else float("nan")
        return out

    def write_csv(self, path, title: str = "") -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# {SUBSTITUTION_NOTE}\n")
            if title:
                fh.write(f"# {title}\n")
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([r[c] if isinstance(r[c], str) else repr(r[c]) for c in COLUMNS])
            for k, v in self.aggregate().items():
                fh.write(f"# {k}={v!r}\n")


def read_report(path) -> tuple[list[dict], dict]:
    rows, agg = [], {}
    lines = open(path).read().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    for ln in lines:
        if ln.startswith("# ") and "=" in ln and " " not in ln[2:].split("=", 1)[0]:
            k, v = ln[2:].split("=", 1)
            agg[k] = float(v)
    for rec in csv.DictReader(body):
        row = {}
        for c in COLUMNS:
            row[c] = rec[c] if c in ("image_id", "oracle_label") else float(rec[c])
        rows.append(row)
    return rows, agg
