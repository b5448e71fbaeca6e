"""Shared test fixtures that are not oracles."""
import numpy as np

from colonforest.geometry import RigidTransform, rotation_about_axis


def colon_segment(n=30):
    """Bending, non-self-similar curve (a helix would slide along itself)."""
    t = np.linspace(0, 1, n)
    c = np.c_[120 * t, 40 * np.sin(2.5 * np.pi * t) * t, 25 * t**2]
    return c - c.mean(axis=0)


def bounded_transform(rng, max_deg=30.0, max_shift=10.0):
    angle = np.deg2rad(rng.uniform(0, max_deg))
    shift = rng.normal(size=3)
    shift *= rng.uniform(0, max_shift) / np.linalg.norm(shift)
    return RigidTransform(rotation_about_axis(rng.normal(size=3), angle), shift)
