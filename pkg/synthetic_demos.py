"""
Synthetic demonstrations bundled with the simulator
"""
import logging
from typing import Dict, Any

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from dmp_data_models import DemoGenerator
from dmp_errors import ScenarioError
from dmp_model import Demonstration

logger = logging.getLogger(__name__)

DEFAULT_RATE = 100.0


def _timestamps(duration: float, rate: float) -> np.ndarray:
    samples = max(int(round(duration * rate)) + 1, 2)
    return np.linspace(0.0, duration, samples)


def min_jerk_profile(s: np.ndarray) -> np.ndarray:
    """10s³ - 15s⁴ + 6s⁵"""
    s = np.asarray(s, dtype=float)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def min_jerk_1d(y0: float = 0.0, g: float = 1.0, duration: float = 2.0, rate: float = DEFAULT_RATE) -> Demonstration:
    t = _timestamps(duration, rate)
    s = t / duration
    return Demonstration(t, (y0 + (g - y0) * min_jerk_profile(s)).reshape(1, -1))


def single_hump_1d(
    y0: float = 0.0,
    g: float = 0.01,
    hump: float = 0.5,
    duration: float = 2.0,
    rate: float = DEFAULT_RATE,
) -> Demonstration:
    """Min-jerk transfer plus one interior bump 64 s³(1-s)³ (peak `hump` at s=0.5)"""
    t = _timestamps(duration, rate)
    s = t / duration
    y = y0 + (g - y0) * min_jerk_profile(s) + hump * 64.0 * s ** 3 * (1.0 - s) ** 3
    return Demonstration(t, y.reshape(1, -1))


def s_curve_2d(
    start=(0.0, 0.0),
    goal=(1.0, 0.0),
    bend: float = 0.3,
    duration: float = 3.0,
    rate: float = DEFAULT_RATE,
) -> Demonstration:
    """Planar S-shaped path between two points"""
    t = _timestamps(duration, rate)
    s = min_jerk_profile(t / duration)
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    chord = goal - start
    normal = np.array([-chord[1], chord[0]])
    positions = start[:, None] + np.outer(chord, s) + np.outer(normal, bend * np.sin(2.0 * np.pi * s))
    return Demonstration(t, positions)


def helix_3d(
    radius: float = 0.1,
    height: float = 0.3,
    turns: float = 1.0,
    duration: float = 4.0,
    rate: float = DEFAULT_RATE,
) -> Demonstration:
    t = _timestamps(duration, rate)
    s = min_jerk_profile(t / duration)
    angle = 2.0 * np.pi * turns * s
    positions = np.vstack((radius * (np.cos(angle) - 1.0), radius * np.sin(angle), height * s))
    return Demonstration(t, positions)


def slerp_orientation(
    start_rotvec=(0.0, 0.0, 0.0),
    goal_rotvec=(0.0, 0.0, 1.2),
    wobble: float = 0.3,
    duration: float = 3.0,
    rate: float = DEFAULT_RATE,
) -> Demonstration:
    """Slerp between two orientations with a smooth roll excursion on top"""
    t = _timestamps(duration, rate)
    s = min_jerk_profile(t / duration)
    keys = Rotation.from_rotvec([list(start_rotvec), list(goal_rotvec)])
    base = Slerp([0.0, 1.0], keys)(s)
    bump = Rotation.from_rotvec(np.outer(wobble * 64.0 * s ** 3 * (1.0 - s) ** 3, [1.0, 0.0, 0.0]))
    quats_xyzw = (bump * base).as_quat()
    # scipy is scalar-last
    quats = np.column_stack((quats_xyzw[:, 3], quats_xyzw[:, :3]))
    return Demonstration.from_quaternions(t, quats)


GENERATORS = {
    DemoGenerator.MIN_JERK: min_jerk_1d,
    DemoGenerator.SINGLE_HUMP: single_hump_1d,
    DemoGenerator.S_CURVE: s_curve_2d,
    DemoGenerator.HELIX: helix_3d,
    DemoGenerator.SLERP: slerp_orientation,
}


def generate_demo(generator: DemoGenerator, params: Dict[str, Any]) -> Demonstration:
    """Build a bundled demonstration by name"""
    generator = DemoGenerator(generator)
    builder = GENERATORS[generator]
    try:
        demo = builder(**params)
    except TypeError as e:
        raise ScenarioError(f"Bad parameters for demo generator '{generator.value}': {e}")
    logger.debug(f"Generated '{generator.value}' demo: n={demo.n}, m={demo.m}, T_f={demo.duration}")
    return demo
