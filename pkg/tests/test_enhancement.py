"""Matched-filter vessel enhancement: bank construction and response maps."""

import numpy as np
import pytest

from retreg.enhancement import (KERNEL_HALF_ACROSS, KERNEL_LENGTH,
                                KERNEL_WINDOW, MODALITY_ANGIOGRAPHY,
                                MODALITY_COLOR, MODALITY_RED_FREE,
                                POLARITY_BRIGHT, POLARITY_DARK,
                                build_filter_bank, enhance,
                                extract_working_channel, filter_responses,
                                polarity_for_modality)
from retreg.errors import InputError


def test_polarity_mapping():
    assert polarity_for_modality(MODALITY_ANGIOGRAPHY) == POLARITY_BRIGHT
    assert polarity_for_modality(MODALITY_COLOR) == POLARITY_DARK
    assert polarity_for_modality(MODALITY_RED_FREE) == POLARITY_DARK
    with pytest.raises(InputError):
        polarity_for_modality("fluorescein")


def test_working_channel_color_takes_green():
    rgb = np.zeros((4, 5, 3), dtype=np.uint8)
    rgb[:, :, 0] = 10
    rgb[:, :, 1] = 99
    rgb[:, :, 2] = 30
    channel = extract_working_channel(rgb, MODALITY_COLOR)
    assert channel.shape == (4, 5)
    assert (channel == 99).all()


def test_working_channel_validation():
    gray = np.zeros((4, 5), dtype=np.uint8)
    with pytest.raises(InputError):
        extract_working_channel(gray, MODALITY_COLOR)
    with pytest.raises(InputError):
        extract_working_channel(np.zeros((4, 5, 3), dtype=np.float64),
                                MODALITY_COLOR)
    with pytest.raises(InputError):
        extract_working_channel(gray, "unknown")
    assert (extract_working_channel(gray, MODALITY_RED_FREE) == gray).all()
    assert (extract_working_channel(gray, MODALITY_ANGIOGRAPHY) == gray).all()


@pytest.mark.parametrize("polarity", [POLARITY_BRIGHT, POLARITY_DARK])
def test_bank_structure(polarity):
    bank = build_filter_bank(polarity)
    assert bank.polarity == polarity
    assert bank.orientations == [15.0 * k for k in range(12)]
    assert len(bank.kernels) == 12
    half = KERNEL_WINDOW // 2
    half_along = KERNEL_LENGTH / 2.0
    for theta, kernel in zip(bank.orientations, bank.kernels):
        assert kernel.shape == (KERNEL_WINDOW, KERNEL_WINDOW)
        # zero mean over the support, so flat regions give zero response
        assert abs(kernel.sum()) < 1e-9
        # nonzero taps stay inside the rotated support box
        rad = np.deg2rad(theta)
        rows, cols = np.nonzero(kernel)
        dx = (cols - half).astype(float)
        dy = -(rows - half).astype(float)
        across = -dx * np.sin(rad) + dy * np.cos(rad)
        along = dx * np.cos(rad) + dy * np.sin(rad)
        assert (np.abs(across) <= KERNEL_HALF_ACROSS + 1e-6).all()
        assert (np.abs(along) <= half_along + 1e-6).all()
        # symmetric under 180-degree rotation
        assert np.allclose(kernel, kernel[::-1, ::-1])


def test_bank_center_sign_follows_polarity():
    half = KERNEL_WINDOW // 2
    bright = build_filter_bank(POLARITY_BRIGHT)
    dark = build_filter_bank(POLARITY_DARK)
    for kernel in bright.kernels:
        assert kernel[half, half] > 0.0
    for kernel in dark.kernels:
        assert kernel[half, half] < 0.0


def test_bank_quarter_turn_relation():
    # rotating the sampling grid a quarter turn maps one kernel onto the
    # one 90 degrees away
    bank = build_filter_bank(POLARITY_BRIGHT)
    assert np.allclose(bank.kernels[6], np.rot90(bank.kernels[0]))
    assert np.allclose(bank.kernels[9], np.rot90(bank.kernels[3]))


def _ridge_image(dims=(41, 41), angle_vertical=True, bright=True):
    rows, cols = np.indices(dims)
    across = cols - dims[1] // 2 if angle_vertical else rows - dims[0] // 2
    profile = 200.0 * np.exp(-(across.astype(float) ** 2) / 8.0)
    base = 30.0 + profile if bright else 230.0 - profile
    return np.floor(base + 0.5).astype(np.uint8)


def test_responses_shape_and_flat_input():
    bank = build_filter_bank(POLARITY_BRIGHT)
    flat = np.full((20, 25), 77, dtype=np.uint8)
    responses = filter_responses(flat, bank)
    assert responses.shape == (12, 20, 25)
    assert np.allclose(responses, 0.0, atol=1e-9)


def test_responses_orientation_selectivity():
    bank = build_filter_bank(POLARITY_BRIGHT)
    vertical = _ridge_image(angle_vertical=True)
    responses = filter_responses(vertical, bank)
    best = int(np.argmax(responses[:, 20, 20]))
    assert bank.orientations[best] == 90.0
    horizontal = _ridge_image(angle_vertical=False)
    responses = filter_responses(horizontal, bank)
    best = int(np.argmax(responses[:, 20, 20]))
    assert bank.orientations[best] == 0.0


def test_enhance_rescales_to_full_range():
    bank = build_filter_bank(POLARITY_BRIGHT)
    enhanced = enhance(_ridge_image(), bank)
    assert enhanced.image.dtype == np.uint8
    assert enhanced.image.min() == 0
    assert enhanced.image.max() == 255
    assert enhanced.image[20, 20] == 255
    assert enhanced.modality == MODALITY_ANGIOGRAPHY


def test_enhance_dark_vessels_turn_bright():
    bank = build_filter_bank(POLARITY_DARK)
    enhanced = enhance(_ridge_image(bright=False), bank)
    assert enhanced.image[20, 20] == 255
    assert enhanced.modality == MODALITY_RED_FREE


def test_enhance_constant_input_is_all_zero():
    bank = build_filter_bank(POLARITY_BRIGHT)
    enhanced = enhance(np.full((15, 15), 123, dtype=np.uint8), bank)
    assert (enhanced.image == 0).all()


def test_enhance_respects_explicit_modality():
    bank = build_filter_bank(POLARITY_DARK)
    enhanced = enhance(_ridge_image(bright=False), bank, MODALITY_COLOR)
    assert enhanced.modality == MODALITY_COLOR
