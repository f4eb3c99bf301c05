from lblrad import fpmodel as fp
from lblrad.fidelity import bin_label, ulp_bins, ulp_histogram

import numpy as np

# produced by ulp_histogram(Nvidia-Pixel, IEEE-RN, n=2**14, seed=0) and frozen
PINNED = {
    -14: 1, -12: 1, -11: 5, -10: 11, -9: 25, -8: 81, -7: 157, -6: 353, -5: 621, -4: 1002,
    -3: 2206, -2: 2205, -1: 1403, 0: 1195, 1: 909, 2: 1391, 3: 1474, 4: 1193, 5: 1243, 6: 529,
    7: 220, 8: 85, 9: 45, 10: 16, 11: 10, 12: 2, 13: 1,
}


def test_bins():
    e = np.array([0.0, 0.4, -0.6, 1.4, 2.6, -7.0, 8.0])
    assert ulp_bins(e).tolist() == [0, 0, -1, 1, 2, -3, 4]
    assert bin_label(3) == "[4,8)" and bin_label(-1) == "-[1,2)" and bin_label(0) == "0"


def test_nvidia_pixel_histogram_is_pinned():
    h = ulp_histogram(fp.PRESETS["Nvidia-Pixel"], fp.PRESETS["IEEE-RN"], n=1 << 14, seed=0)
    assert h.counts == PINNED
    assert sum(h.counts.values()) == 1 << 14


def test_identical_profiles_give_zero_bin():
    p = fp.PRESETS["IEEE-RN"]
    h = ulp_histogram(p, p, n=2048, seed=1)
    assert h.counts == {0: 2048}
