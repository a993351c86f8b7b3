"""Independent brute-force reference implementations used by the tests.

Everything here is deliberately naive (plain loops over definitions) and
shares no code with the package.
"""

import numpy as np


def conv1d_direct(x, w, b, padding):
    """Triple-loop temporal convolution over one instance."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    in_ch, length = x.shape
    out_ch, _, k = w.shape
    padded = np.zeros((in_ch, length + 2 * padding))
    padded[:, padding:padding + length] = x
    t_out = length + 2 * padding - k + 1
    out = np.zeros((out_ch, t_out))
    for o in range(out_ch):
        for t in range(t_out):
            acc = 0.0 if b is None else float(b[o])
            for i in range(in_ch):
                for kk in range(k):
                    acc += w[o, i, kk] * padded[i, t + kk]
            out[o, t] = acc
    return out


def depthwise_conv1d_direct(x, w, padding):
    """Per-channel loop convolution over one instance."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    channels, length = x.shape
    _, k = w.shape
    padded = np.zeros((channels, length + 2 * padding))
    padded[:, padding:padding + length] = x
    t_out = length + 2 * padding - k + 1
    out = np.zeros((channels, t_out))
    for c in range(channels):
        for t in range(t_out):
            out[c, t] = sum(w[c, kk] * padded[c, t + kk] for kk in range(k))
    return out


def matvec_direct(w, x, b):
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(w.shape[0])
    for m in range(w.shape[0]):
        out[m] = float(b[m]) + sum(w[m, n] * x[n] for n in range(w.shape[1]))
    return out


def kmax_direct(row, k):
    """Sort-and-reselect: k largest values, earliest position wins ties,

    returned in original temporal order."""
    ranked = sorted(range(len(row)), key=lambda i: (-row[i], i))[:k]
    return [row[i] for i in sorted(ranked)]


def central_difference(f, x, j, eps):
    """Two-sided derivative estimate of scalar f at entry j of flat array x."""
    saved = x[j]
    x[j] = saved + eps
    hi = f()
    x[j] = saved - eps
    lo = f()
    x[j] = saved
    return (hi - lo) / (2 * eps)


def histogram_classifier(samples, n_classes, signature_indices):
    """Predict the class whose signature character index is most frequent."""
    predictions = []
    for s in samples:
        counts = [int((s.indices == sig).sum()) for sig in signature_indices[:n_classes]]
        predictions.append(int(np.argmax(counts)))
    return predictions
