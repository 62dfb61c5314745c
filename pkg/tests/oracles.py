"""Reference implementations written independently of the package.

They use plain Python floats or scipy so they share no code path with
``depfusion``; tests compare the package against them.
"""

import math

import numpy as np
from scipy import ndimage


def rotate_xy(x, y, cx, cy, degrees):
    """Closed-form rotation with +x turning toward +y (y axis points down)."""
    t = math.radians(degrees)
    dx, dy = x - cx, y - cy
    return (cx + dx * math.cos(t) - dy * math.sin(t),
            cy + dx * math.sin(t) + dy * math.cos(t))


def bilinear_crop(image, x_min, y_min, x_max, y_max, target):
    """Half-pixel bilinear resampling of a box via scipy.ndimage.map_coordinates."""
    centers = (np.arange(target) + 0.5) / target
    xs = x_min + centers * (x_max - x_min) - 0.5
    ys = y_min + centers * (y_max - y_min) - 0.5
    rows, cols = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([ndimage.map_coordinates(image[:, :, c].astype(np.float64), [rows, cols],
                                             order=1, mode="nearest")
                     for c in range(image.shape[2])], axis=2)


def mean_loop(values):
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def mae_loop(preds, labels):
    return mean_loop([abs(p - y) for p, y in zip(preds, labels)])


def rmse_loop(preds, labels):
    return math.sqrt(mean_loop([(p - y) * (p - y) for p, y in zip(preds, labels)]))


def sorted_abs_errors(preds, labels):
    errs = [abs(p - y) for p, y in zip(preds, labels)]
    # insertion sort keeps this independent of the builtin used by the package
    out = []
    for e in errs:
        i = len(out)
        while i > 0 and out[i - 1] > e:
            i -= 1
        out.insert(i, e)
    return out


def radam_reference(grad_fn, theta0, steps, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar RAdam following the published pseudo-code.

    Returns the iterates theta_1..theta_steps and, per step, whether the
    variance-rectified branch was taken.
    """
    theta, m, v = float(theta0), 0.0, 0.0
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    iterates, rectified = [], []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        rho_t = rho_inf - 2.0 * t * beta2 ** t / (1.0 - beta2 ** t)
        if rho_t > 4.0:
            v_hat = math.sqrt(v / (1.0 - beta2 ** t))
            r_t = math.sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
            theta = theta - lr * r_t * m_hat / (v_hat + eps)
            rectified.append(True)
        else:
            theta = theta - lr * m_hat
            rectified.append(False)
        iterates.append(theta)
    return iterates, rectified
