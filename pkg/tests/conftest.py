"""Session fixtures: a JPEG corpus generated at test time by OpenCV."""

import cv2
import numpy as np
import pytest


def _encode(image, quality, rst=None, sampling=None) -> bytes:
    flags = [cv2.IMWRITE_JPEG_QUALITY, quality]
    if rst is not None:
        flags += [cv2.IMWRITE_JPEG_RST_INTERVAL, rst]
    if sampling is not None:
        flags += [cv2.IMWRITE_JPEG_SAMPLING_FACTOR, sampling]
    ok, buf = cv2.imencode(".jpg", image, flags)
    assert ok, "reference encoder failed"
    return buf.tobytes()


def _test_image(rng, h, w, color):
    # gradient + texture + hard edges, so every frequency band is exercised
    yy, xx = np.mgrid[0:h, 0:w]
    base = 96 + 64 * np.sin(yy / 5.0) + 48 * np.cos(xx / 7.0)
    noise = rng.normal(0, 24, (h, w))
    plane = np.clip(base + noise, 0, 255)
    plane[h // 3: h // 3 + 4, :] = 255
    plane[:, w // 2] = 0
    if not color:
        return plane.astype(np.uint8)
    shifted = np.stack([plane, np.roll(plane, 3, 0), np.roll(plane, 5, 1)], axis=2)
    return shifted.astype(np.uint8)


@pytest.fixture(scope="session")
def jpeg_corpus():
    """>= 10 baseline files: varied quality, gray and 4:4:4 color, with and
    without restart markers. Each entry: (name, bytes)."""
    rng = np.random.default_rng(2024)
    s444 = cv2.IMWRITE_JPEG_SAMPLING_FACTOR_444
    corpus = []
    for q in (95, 75, 50, 30):
        corpus.append((f"gray32_q{q}", _encode(_test_image(rng, 32, 32, False), q)))
    corpus.append(("gray64_q85", _encode(_test_image(rng, 64, 64, False), 85)))
    corpus.append(("gray48x32_q60", _encode(_test_image(rng, 48, 32, False), 60)))
    corpus.append(("gray32_q75_rst2", _encode(_test_image(rng, 32, 32, False), 75, rst=2)))
    corpus.append(("gray64_q60_rst4", _encode(_test_image(rng, 64, 64, False), 60, rst=4)))
    for q in (90, 60):
        corpus.append((f"color32_q{q}", _encode(_test_image(rng, 32, 32, True), q, sampling=s444)))
    corpus.append(("color48_q80", _encode(_test_image(rng, 48, 48, True), 80, sampling=s444)))
    corpus.append(("color32_q70_rst3", _encode(_test_image(rng, 32, 32, True), 70, rst=3, sampling=s444)))
    return corpus


@pytest.fixture(scope="session")
def jpeg_420():
    """A chroma-subsampled file: parseable, but rejected by the network path."""
    rng = np.random.default_rng(77)
    return _encode(_test_image(rng, 32, 32, True), 80,
                   sampling=cv2.IMWRITE_JPEG_SAMPLING_FACTOR_420)
