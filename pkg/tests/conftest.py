import os

os.environ.setdefault("MPLBACKEND", "Agg")

import numpy as np
import pytest

from hdrfusion import ExposureProgram, ResponseCurve, VignettingMap
from hdrfusion.sensorsim import CameraSim, Scene


@pytest.fixture
def linear_curve():
    return ResponseCurve.linear()


@pytest.fixture
def gamma_curve():
    return ResponseCurve.gamma(2.2)


@pytest.fixture
def small_program(linear_curve):
    return ExposureProgram(times=(0.001, 0.01, 0.1), curve=linear_curve)


def diverse_scene(width=96, height=64, low=0.01, high=2.0, key=99):
    """Scene with per-pixel log-uniform radiance (seeded, gray)."""
    rng = np.random.Generator(np.random.Philox(key=np.array([key, 0], dtype=np.uint64)))
    radiance = np.exp(rng.uniform(np.log(low), np.log(high), size=(height, width, 1)))
    return Scene(np.repeat(radiance, 3, axis=2))


def bracket_stack(curve, noise, times, seed, scene=None):
    """Capture one frame per time with a lag-free simulator."""
    program = ExposureProgram(times=tuple(sorted(times)), curve=curve)
    if scene is None:
        scene = diverse_scene()
    vmap = VignettingMap.uniform(scene.width, scene.height)
    sim = CameraSim(curve, vmap, program, noise=noise, lag=0, seed=seed)
    stack = []
    for t in program.times:
        sim.command_exposure(t)
        stack.append(sim.capture(scene))
    return stack
