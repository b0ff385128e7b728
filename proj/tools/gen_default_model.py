#!/usr/bin/env python3
"""Regenerates data/default_model.json.

Keypoints and markers are placed on segments; the fallback table expresses
every marker as an affine combination of keypoints that are rigidly fixed to
the same body (joint centers count for both adjacent segments). Wrist markers
cannot be reached that way from the 26 keypoints, so they are offset along
the shoulder-shoulder axis and are exact only in the neutral pose.
"""
import json
import sys

import numpy as np

SEGMENTS = [
    # name, parent, offset in parent frame (m)
    ("pelvis", "", (0.0, 0.0, 0.0)),
    ("abdomen", "pelvis", (-0.03, 0.10, 0.0)),
    ("thorax", "abdomen", (0.0, 0.18, 0.0)),
    ("r_thigh", "pelvis", (0.0, 0.0, 0.09)),
    ("r_shank", "r_thigh", (0.0, -0.42, 0.0)),
    ("l_thigh", "pelvis", (0.0, 0.0, -0.09)),
    ("l_shank", "l_thigh", (0.0, -0.42, 0.0)),
    ("r_upperarm", "thorax", (0.0, 0.19, 0.19)),
    ("r_forearm", "r_upperarm", (0.0, -0.29, 0.0)),
    ("l_upperarm", "thorax", (0.0, 0.19, -0.19)),
    ("l_forearm", "l_upperarm", (0.0, -0.29, 0.0)),
]

# Positive angle = flexion / adduction (hip) / abduction (shoulder) /
# internal rotation / pronation on both sides; left axes are mirrored.
JOINTS = [
    ("lumbar_flexion", "abdomen", (0, 0, -1), -0.5, 1.3, "center"),
    ("lumbar_bending", "abdomen", (1, 0, 0), -0.5, 0.5, "center"),
    ("lumbar_rotation", "abdomen", (0, 1, 0), -0.6, 0.6, "center"),
    ("thoracic_extension", "thorax", (0, 0, 1), -0.4, 0.5, "center"),
    ("r_hip_flexion", "r_thigh", (0, 0, 1), -0.5, 2.3, "right"),
    ("r_hip_adduction", "r_thigh", (1, 0, 0), -0.7, 0.5, "right"),
    ("r_hip_rotation", "r_thigh", (0, 1, 0), -0.8, 0.8, "right"),
    ("r_knee_flexion", "r_shank", (0, 0, -1), -0.1, 2.5, "right"),
    ("l_hip_flexion", "l_thigh", (0, 0, 1), -0.5, 2.3, "left"),
    ("l_hip_adduction", "l_thigh", (-1, 0, 0), -0.7, 0.5, "left"),
    ("l_hip_rotation", "l_thigh", (0, -1, 0), -0.8, 0.8, "left"),
    ("l_knee_flexion", "l_shank", (0, 0, -1), -0.1, 2.5, "left"),
    ("r_shoulder_flexion", "r_upperarm", (0, 0, 1), -1.0, 3.0, "right"),
    ("r_shoulder_abduction", "r_upperarm", (-1, 0, 0), -0.6, 2.8, "right"),
    ("r_shoulder_rotation", "r_upperarm", (0, 1, 0), -1.3, 1.3, "right"),
    ("r_elbow_flexion", "r_forearm", (0, 0, 1), -0.1, 2.6, "right"),
    ("r_elbow_pronation", "r_forearm", (0, 1, 0), -1.4, 1.4, "right"),
    ("l_shoulder_flexion", "l_upperarm", (0, 0, 1), -1.0, 3.0, "left"),
    ("l_shoulder_abduction", "l_upperarm", (1, 0, 0), -0.6, 2.8, "left"),
    ("l_shoulder_rotation", "l_upperarm", (0, -1, 0), -1.3, 1.3, "left"),
    ("l_elbow_flexion", "l_forearm", (0, 0, 1), -0.1, 2.6, "left"),
    ("l_elbow_pronation", "l_forearm", (0, -1, 0), -1.4, 1.4, "left"),
]

LOWER_MASK = list(range(0, 12))
UPPER_MASK = [0, 1, 2, 3, 4, 7, 8, 11] + list(range(12, 22))

# 26 keypoints in Halpe-26 order.
KEYPOINTS = [
    ("nose", "thorax", (0.10, 0.34, 0.0)),
    ("left_eye", "thorax", (0.08, 0.37, -0.035)),
    ("right_eye", "thorax", (0.08, 0.37, 0.035)),
    ("left_ear", "thorax", (0.0, 0.35, -0.075)),
    ("right_ear", "thorax", (0.0, 0.35, 0.075)),
    ("left_shoulder", "thorax", (0.0, 0.19, -0.19)),
    ("right_shoulder", "thorax", (0.0, 0.19, 0.19)),
    ("left_elbow", "l_upperarm", (0.0, -0.29, 0.0)),
    ("right_elbow", "r_upperarm", (0.0, -0.29, 0.0)),
    ("left_wrist", "l_forearm", (0.0, -0.26, 0.0)),
    ("right_wrist", "r_forearm", (0.0, -0.26, 0.0)),
    ("left_hip", "pelvis", (0.0, 0.0, -0.09)),
    ("right_hip", "pelvis", (0.0, 0.0, 0.09)),
    ("left_knee", "l_thigh", (0.0, -0.42, 0.0)),
    ("right_knee", "r_thigh", (0.0, -0.42, 0.0)),
    ("left_ankle", "l_shank", (0.0, -0.41, 0.0)),
    ("right_ankle", "r_shank", (0.0, -0.41, 0.0)),
    ("head", "thorax", (0.0, 0.47, 0.0)),
    ("neck", "thorax", (0.0, 0.22, 0.0)),
    ("hip", "pelvis", (-0.03, 0.06, 0.0)),
    ("left_big_toe", "l_shank", (0.15, -0.47, 0.02)),
    ("right_big_toe", "r_shank", (0.15, -0.47, -0.02)),
    ("left_small_toe", "l_shank", (0.13, -0.47, -0.03)),
    ("right_small_toe", "r_shank", (0.13, -0.47, 0.03)),
    ("left_heel", "l_shank", (-0.05, -0.46, 0.0)),
    ("right_heel", "r_shank", (-0.05, -0.46, 0.0)),
]

MARKERS = [
    ("r_ilc", "pelvis", (-0.045, 0.09, 0.13)),
    ("l_ilc", "pelvis", (-0.045, 0.09, -0.13)),
    ("r_psis", "pelvis", (-0.06, 0.12, 0.04)),
    ("l_psis", "pelvis", (-0.06, 0.12, -0.04)),
    ("r_acromion", "thorax", (0.0, 0.21, 0.20)),
    ("l_acromion", "thorax", (0.0, 0.21, -0.20)),
    ("c7", "thorax", (-0.07, 0.22, 0.0)),
    ("clavicle", "thorax", (0.06, 0.18, 0.0)),
    ("sternum", "thorax", (0.08, 0.08, 0.0)),
    ("r_thigh", "r_thigh", (0.0, -0.21, 0.0)),
    ("r_knee", "r_thigh", (0.0, -0.42, 0.0)),
    ("l_thigh", "l_thigh", (0.0, -0.21, 0.0)),
    ("l_knee", "l_thigh", (0.0, -0.42, 0.0)),
    ("r_tibia", "r_shank", (0.03, -0.20, 0.0)),
    ("r_ankle_lat", "r_shank", (0.0, -0.41, 0.035)),
    ("r_calc", "r_shank", (-0.05, -0.46, 0.0)),
    ("r_toe", "r_shank", (0.16, -0.46, 0.0)),
    ("l_tibia", "l_shank", (0.03, -0.20, 0.0)),
    ("l_ankle_lat", "l_shank", (0.0, -0.41, -0.035)),
    ("l_calc", "l_shank", (-0.05, -0.46, 0.0)),
    ("l_toe", "l_shank", (0.16, -0.46, 0.0)),
    ("r_arm", "r_upperarm", (0.0, -0.15, 0.0)),
    ("r_elbow", "r_upperarm", (0.0, -0.29, 0.0)),
    ("l_arm", "l_upperarm", (0.0, -0.15, 0.0)),
    ("l_elbow", "l_upperarm", (0.0, -0.29, 0.0)),
    ("r_wrist_rad", "r_forearm", (0.0, -0.26, 0.035)),
    ("r_wrist_uln", "r_forearm", (0.0, -0.26, -0.035)),
    ("l_wrist_rad", "l_forearm", (0.0, -0.26, -0.035)),
    ("l_wrist_uln", "l_forearm", (0.0, -0.26, 0.035)),
]

# Rigid bodies for the fallback: keypoints expressed in the body's frame.
# Proximal joint centers sit at the body origin.
def kp_local(name):
    for n, seg, off in KEYPOINTS:
        if n == name:
            return seg, np.array(off)
    raise KeyError(name)


def body_points(segment):
    pts = {}
    for n, seg, off in KEYPOINTS:
        if seg == segment:
            pts[n] = np.array(off)
    proximal = {
        "r_thigh": "right_hip", "l_thigh": "left_hip",
        "r_shank": "right_knee", "l_shank": "left_knee",
        "r_upperarm": "right_shoulder", "l_upperarm": "left_shoulder",
        "r_forearm": "right_elbow", "l_forearm": "left_elbow",
    }
    if segment in proximal:
        pts[proximal[segment]] = np.zeros(3)
    return pts


SCALING_PAIRS = [
    ("pelvis", "r_ilc", "l_ilc"),
    ("abdomen", "r_psis", "c7"),
    ("thorax", "r_acromion", "l_acromion"),
    ("r_thigh", "r_thigh", "r_knee"),
    ("r_shank", "r_knee", "r_calc"),
    ("l_thigh", "l_thigh", "l_knee"),
    ("l_shank", "l_knee", "l_calc"),
    ("r_upperarm", "r_arm", "r_elbow"),
    ("r_forearm", "r_elbow", "r_wrist_rad"),
    ("l_upperarm", "l_arm", "l_elbow"),
    ("l_forearm", "l_elbow", "l_wrist_rad"),
]

SHOULDER_WIDTH = 0.38


def fallback_entry(name, segment, local):
    local = np.array(local)
    if segment in ("r_forearm", "l_forearm"):
        wrist = "right_wrist" if segment == "r_forearm" else "left_wrist"
        k = local[2] / SHOULDER_WIDTH  # local z offset along R->L shoulder axis
        return {
            "marker": name,
            "weights": {wrist: 1.0, "right_shoulder": k, "left_shoulder": -k},
            "max_offset": float(abs(local[2])),
        }
    pts = body_points(segment)
    names = sorted(pts)
    P = np.array([pts[n] for n in names]).T
    A = np.vstack([P, np.ones((1, len(names)))])
    b = np.concatenate([local, [1.0]])
    w, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.linalg.norm(A @ w - b) > 1e-12:
        sys.exit(f"marker {name} is not in the affine hull of {segment}")
    w[np.abs(w) < 1e-14] = 0.0
    return {
        "marker": name,
        "weights": {n: float(round(x, 15)) for n, x in zip(names, w) if x != 0.0},
        "max_offset": 0.0,
    }


def main():
    model = {
        "name": "kinact-default-22dof",
        "frame": "ISB: x anterior, y superior, z right; angles in radians",
        "segments": [
            {"name": n, "parent": p, "offset": list(o), "scale": 1.0}
            for n, p, o in SEGMENTS
        ],
        "joints": [
            {"name": n, "segment": s, "axis": list(a), "lower": lo, "upper": hi,
             "side": side}
            for n, s, a, lo, hi, side in JOINTS
        ],
        "keypoints": [
            {"name": n, "segment": s, "offset": list(o)} for n, s, o in KEYPOINTS
        ],
        "markers": [
            {"name": n, "segment": s, "offset": list(o)} for n, s, o in MARKERS
        ],
        "masks": {"lower": LOWER_MASK, "upper": UPPER_MASK},
        "scaling_pairs": [
            {"segment": s, "markers": [a, b]} for s, a, b in SCALING_PAIRS
        ],
        "fallback": [fallback_entry(n, s, o) for n, s, o in MARKERS],
    }
    out = sys.argv[1] if len(sys.argv) > 1 else "data/default_model.json"
    with open(out, "w") as f:
        json.dump(model, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
