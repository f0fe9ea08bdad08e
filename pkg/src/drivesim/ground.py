"""Ground-height estimation: RANSAC plane extraction and a global MLP fit.

Per-frame ground points are found by plane consensus, pooled across frames,
and fitted by a small fully connected network trained on an asymmetric
height loss: predictions above a sample are penalized quadratically (the
ground must not float above measured returns) while predictions below fall
under a gentler Huber penalty, since returns above the true ground surface
are usually objects, not terrain.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

HIDDEN = 64
DEFAULT_HUBER_DELTA = 1.0
DEFAULT_EPOCHS = 2000
DEFAULT_LR = 1e-3
BATCH_SIZE = 256
RANSAC_MIN_POINTS = 50
RANSAC_MIN_INLIER_RATIO = 0.2
RANSAC_MAX_TILT_DEG = 30.0
MODEL_SCHEMA_VERSION = 1


class NoGroundFoundError(RuntimeError):
    """Consensus failed: no sufficiently horizontal, populated plane."""


@dataclass(slots=True)
class PointCloud:
    points: np.ndarray  # (N, 3)
    frame_id: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be (N, 3)")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")


def load_clouds_csv(paths) -> list[PointCloud]:
    """Read `frame,x,y,z` rows from one or more CSV files, one cloud per frame."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    frames: dict[int, list] = {}
    for path in paths:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                frames.setdefault(int(row["frame"]), []).append(
                    (float(row["x"]), float(row["y"]), float(row["z"]))
                )
    return [PointCloud(np.array(pts), frame_id=fid) for fid, pts in sorted(frames.items())]


def ransac_ground(cloud: PointCloud, iterations: int = 200, inlier_threshold: float = 0.05,
                  rng=None):
    """Best near-horizontal plane by inlier count over random 3-point samples.

    Returns ((a, b, c, d), inliers) with the normal unit length and c > 0.
    Planes tilted more than RANSAC_MAX_TILT_DEG from horizontal never win.
    """
    pts = cloud.points
    n = len(pts)
    if n < RANSAC_MIN_POINTS:
        raise NoGroundFoundError(f"frame {cloud.frame_id}: {n} points < {RANSAC_MIN_POINTS}")
    if rng is None:
        rng = np.random.default_rng(0)
    min_c = math.cos(math.radians(RANSAC_MAX_TILT_DEG))
    best_count = -1
    best_plane = None
    for _ in range(iterations):
        idx = rng.choice(n, size=3, replace=False)
        p0, p1, p2 = pts[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal = normal / norm
        if normal[2] < 0:
            normal = -normal
        if normal[2] < min_c:
            continue
        d = -float(normal @ p0)
        dist = np.abs(pts @ normal + d)
        count = int(np.count_nonzero(dist <= inlier_threshold))
        if count > best_count:
            best_count = count
            best_plane = (float(normal[0]), float(normal[1]), float(normal[2]), d)
    if best_plane is None or best_count / n < RANSAC_MIN_INLIER_RATIO:
        raise NoGroundFoundError(
            f"frame {cloud.frame_id}: best inlier ratio "
            f"{max(best_count, 0) / n:.3f} < {RANSAC_MIN_INLIER_RATIO}"
        )
    a, b, c, d = best_plane
    dist = np.abs(pts @ np.array([a, b, c]) + d)
    return best_plane, pts[dist <= inlier_threshold]


def height_loss(z_hat: float, z: float, huber_delta: float = DEFAULT_HUBER_DELTA) -> float:
    """Asymmetric height penalty for a single prediction/sample pair."""
    r = z_hat - z
    if r > 0:
        return r * r
    r = abs(r)
    if r <= huber_delta:
        return 0.5 * r * r
    return huber_delta * (r - 0.5 * huber_delta)


def _loss_and_dloss(z_hat: np.ndarray, z: np.ndarray, delta: float):
    """Vectorized loss values and d(loss)/d(z_hat)."""
    r = z_hat - z
    above = r > 0
    small = np.abs(r) <= delta
    loss = np.where(above, r * r, np.where(small, 0.5 * r * r, delta * (np.abs(r) - 0.5 * delta)))
    grad = np.where(above, 2.0 * r, np.where(small, r, delta * np.sign(r)))
    return loss, grad


class GroundModel:
    """Three fully connected layers (2 -> 64 -> 64 -> 1) with tanh hiddens.

    Training is plain mini-batch descent with Adam moments; gradients come
    from manual backpropagation (checked against finite differences in the
    test suite). Prediction is deterministic once fitted.
    """

    def __init__(self, huber_delta: float = DEFAULT_HUBER_DELTA, seed: int = 0):
        self.huber_delta = huber_delta
        rng = np.random.default_rng(seed)
        self.w1 = rng.normal(0.0, math.sqrt(1.0 / 2), (2, HIDDEN))
        self.b1 = np.zeros(HIDDEN)
        self.w2 = rng.normal(0.0, math.sqrt(1.0 / HIDDEN), (HIDDEN, HIDDEN))
        self.b2 = np.zeros(HIDDEN)
        self.w3 = rng.normal(0.0, math.sqrt(1.0 / HIDDEN), (HIDDEN, 1))
        self.b3 = np.zeros(1)
        self.x_mean = np.zeros(2)
        self.x_scale = np.ones(2)
        self.fitted = False
        self.epoch_losses: list[float] = []

    # -- forward / backward -------------------------------------------------

    def _params(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def forward(self, xy: np.ndarray) -> np.ndarray:
        xn = (xy - self.x_mean) / self.x_scale
        h1 = np.tanh(xn @ self.w1 + self.b1)
        h2 = np.tanh(h1 @ self.w2 + self.b2)
        return (h2 @ self.w3 + self.b3)[:, 0]

    def loss(self, xy: np.ndarray, z: np.ndarray) -> float:
        values, _ = _loss_and_dloss(self.forward(xy), z, self.huber_delta)
        return float(values.mean())

    def loss_and_grads(self, xy: np.ndarray, z: np.ndarray):
        xn = (xy - self.x_mean) / self.x_scale
        a1 = xn @ self.w1 + self.b1
        h1 = np.tanh(a1)
        a2 = h1 @ self.w2 + self.b2
        h2 = np.tanh(a2)
        z_hat = (h2 @ self.w3 + self.b3)[:, 0]
        values, dz = _loss_and_dloss(z_hat, z, self.huber_delta)
        n = len(z)
        dz = (dz / n)[:, None]
        dw3 = h2.T @ dz
        db3 = dz.sum(axis=0)
        dh2 = dz @ self.w3.T
        da2 = dh2 * (1.0 - h2 * h2)
        dw2 = h1.T @ da2
        db2 = da2.sum(axis=0)
        dh1 = da2 @ self.w2.T
        da1 = dh1 * (1.0 - h1 * h1)
        dw1 = xn.T @ da1
        db1 = da1.sum(axis=0)
        return float(values.mean()), [dw1, db1, dw2, db2, dw3, db3]

    # -- training ------------------------------------------------------------

    def fit(self, xy: np.ndarray, z: np.ndarray, epochs: int = DEFAULT_EPOCHS,
            lr: float = DEFAULT_LR, rng=None, batch_size: int = BATCH_SIZE):
        if rng is None:
            rng = np.random.default_rng(0)
        xy = np.asarray(xy, dtype=float)
        z = np.asarray(z, dtype=float)
        self.x_mean = xy.mean(axis=0)
        self.x_scale = np.maximum(xy.std(axis=0), 1e-6)
        params = self._params()
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0
        self.epoch_losses = []
        n = len(z)
        for _ in range(epochs):
            order = rng.permutation(n)
            for lo in range(0, n, batch_size):
                sel = order[lo : lo + batch_size]
                _, grads = self.loss_and_grads(xy[sel], z[sel])
                step += 1
                for p, g, mi, vi in zip(params, grads, m, v):
                    mi *= beta1
                    mi += (1 - beta1) * g
                    vi *= beta2
                    vi += (1 - beta2) * g * g
                    m_hat = mi / (1 - beta1**step)
                    v_hat = vi / (1 - beta2**step)
                    p -= lr * m_hat / (np.sqrt(v_hat) + eps)
            self.epoch_losses.append(self.loss(xy, z))
        self.fitted = True
        return self

    def predict(self, x, y):
        xy = np.column_stack((np.atleast_1d(x).astype(float), np.atleast_1d(y).astype(float)))
        out = self.forward(xy)
        return float(out[0]) if np.isscalar(x) or np.ndim(x) == 0 else out

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "huber_delta": self.huber_delta,
            "fitted": self.fitted,
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "weights": {
                "w1": self.w1.tolist(), "b1": self.b1.tolist(),
                "w2": self.w2.tolist(), "b2": self.b2.tolist(),
                "w3": self.w3.tolist(), "b3": self.b3.tolist(),
            },
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def from_dict(cls, raw: dict) -> "GroundModel":
        if raw.get("schema_version") != MODEL_SCHEMA_VERSION:
            raise ValueError(f"unsupported ground model schema {raw.get('schema_version')!r}")
        model = cls(huber_delta=raw["huber_delta"])
        w = raw["weights"]
        model.w1 = np.array(w["w1"])
        model.b1 = np.array(w["b1"])
        model.w2 = np.array(w["w2"])
        model.b2 = np.array(w["b2"])
        model.w3 = np.array(w["w3"])
        model.b3 = np.array(w["b3"])
        model.x_mean = np.array(raw["x_mean"])
        model.x_scale = np.array(raw["x_scale"])
        model.fitted = bool(raw["fitted"])
        return model

    @classmethod
    def load(cls, path) -> "GroundModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_ground(clouds, model: GroundModel | None = None, epochs: int = DEFAULT_EPOCHS,
               lr: float = DEFAULT_LR, rng=None, ransac_iterations: int = 200,
               inlier_threshold: float = 0.05) -> GroundModel:
    """Pool per-frame RANSAC inliers and train the global height model.

    Frames whose consensus fails are skipped; if every frame fails, the
    failure propagates.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if model is None:
        model = GroundModel()
    pools = []
    last_err = None
    for cloud in clouds:
        try:
            _, inliers = ransac_ground(cloud, ransac_iterations, inlier_threshold, rng)
            pools.append(inliers)
        except NoGroundFoundError as e:
            last_err = e
    if not pools:
        raise last_err if last_err is not None else NoGroundFoundError("no clouds given")
    pts = np.vstack(pools)
    model.fit(pts[:, :2], pts[:, 2], epochs=epochs, lr=lr, rng=rng)
    return model


def query_height(model: GroundModel, x: float, y: float) -> float:
    """Deterministic forward pass at one location."""
    return float(model.forward(np.array([[float(x), float(y)]]))[0])
