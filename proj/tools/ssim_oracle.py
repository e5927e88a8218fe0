# Copyright 2026 The tkn Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

# Regenerates the frozen SSIM values in tests/unit/metric_pairs.hpp.
# Requires numpy and scikit-image.
import numpy as np
from skimage.metrics import structural_similarity

def lcg_frame(seed, shape):
    x = seed
    out = np.empty(int(np.prod(shape)))
    for i in range(out.size):
        x = (1103515245 * x + 12345) % (1 << 31)
        out[i] = ((x >> 8) % 256) / 255.0
    return out.reshape(shape)

def pair(k):
    if k == 0:
        return lcg_frame(1, (16, 16)), lcg_frame(2, (16, 16))
    if k == 1:
        a = lcg_frame(3, (3, 20, 24))
        b = np.clip(a + 0.2 * (lcg_frame(4, (3, 20, 24)) - 0.5), 0, 1)
        return a, b
    yy, xx = np.mgrid[0:32, 0:32]
    a = (xx + yy) / 62.0
    b = 0.5 * a + 0.25 * lcg_frame(5, (32, 32))
    return a, b

for k in range(3):
    a, b = pair(k)
    kw = dict(gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0)
    if a.ndim == 3:
        kw["channel_axis"] = 0
    print(k, repr(structural_similarity(a, b, **kw)))
z = np.zeros((16, 16)); o = np.ones((16, 16))
print("zeros/ones", repr(structural_similarity(z, o, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0)))
