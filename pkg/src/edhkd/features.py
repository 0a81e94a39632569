"""Shallow features of segmented IMU and EMG windows."""
import numpy as np

from edhkd import kernels

IMU_FEATURES = ("mean", "std", "max", "min", "first", "last")
EMG_FEATURES = ("mav", "wl", "ssc", "zc", "ar1", "ar2", "ar3", "ar4", "ar5", "ar6")
AR_ORDER = 6


def extract_imu_features_batch(windows):
    """Features for a stack of windows ``(segments, samples, channels)``.

    Returns ``(segments, channels * 6)``: per channel, in order, mean,
    population std, max, min, first and last sample.
    """
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim != 3:
        raise ValueError("windows must be (segments, samples, channels)")
    if w.shape[1] < 2:
        raise ValueError("window length must be >= 2")
    feats = np.stack(
        [w.mean(axis=1), w.std(axis=1), w.max(axis=1), w.min(axis=1), w[:, 0, :], w[:, -1, :]],
        axis=-1,
    )
    return feats.reshape(w.shape[0], -1)


def extract_imu_features(window):
    """Features of one window ``(samples, channels)`` as a flat channels*6 vector."""
    w = np.asarray(window, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    return extract_imu_features_batch(w[None])[0]


def autocorrelation(x, maxlag):
    """Biased estimate r[k] = (1/n) sum_t x[t] x[t+k] for k = 0..maxlag."""
    n = len(x)
    return np.array([np.dot(x[: n - k], x[k:]) / n for k in range(maxlag + 1)])


def ar_coefficients(x, order=AR_ORDER):
    x = np.asarray(x, dtype=np.float64)
    return kernels.levinson_durbin(autocorrelation(x, order), order)


def extract_emg_features(x, ssc_threshold=0.0, zc_threshold=0.0, order=AR_ORDER):
    """MAV, waveform length, slope-sign changes, zero crossings and AR(6) coefficients."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("EMG window must be a single channel")
    if len(x) <= order + 1:
        raise ValueError(f"EMG window must be longer than {order + 1} samples")
    diff = np.diff(x)
    mav = np.mean(np.abs(x))
    wl = np.sum(np.abs(diff))
    ssc = np.sum(diff[:-1] * -diff[1:] > ssc_threshold)
    zc = np.sum((x[:-1] * x[1:] < 0) & (np.abs(diff) >= zc_threshold))
    return np.concatenate([[mav, wl, ssc, zc], ar_coefficients(x, order)])
