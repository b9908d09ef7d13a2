"""Walk through the geometric and prompt pieces on hand-picked inputs.

Run: python3 demos/pose_and_prompts.py
"""

import numpy as np

from ttmkit.headpose import euler_from_rotation, gram_schmidt_6d
from ttmkit.vmma import build_prompt, coarse_row, missing_ratio

# a slightly skewed 6D vector still lands on a proper rotation
a1 = np.array([1.0, 0.1, 0.0])
a2 = np.array([0.2, 1.0, 0.3])
R = gram_schmidt_6d(a1, a2).data
print("R =\n", np.round(R, 6))
print("R^T R - I max:", np.abs(R.T @ R - np.eye(3)).max(), " det:", np.linalg.det(R))
yaw, pitch, roll = np.degrees(euler_from_rotation(R))
print(f"yaw {yaw:.2f} deg, pitch {pitch:.2f} deg, roll {roll:.2f} deg")

# frames 2-4 lost their head crop
present = np.array([[True, True, False, False, False, True, True, True, True, True]])
print("\nmissing ratio:", missing_ratio(present)[0])
print("fine prompt, first dim per frame:", build_prompt(present, 4, "fine")[0, :, 0])
for beta in (0.2, 0.3, 0.5):
    print(f"coarse row at beta={beta}:", coarse_row(float(missing_ratio(present)[0]), beta, 4))
