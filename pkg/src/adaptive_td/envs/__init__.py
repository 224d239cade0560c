"""Experimental environments and a name-based factory."""

from __future__ import annotations

from .chain import ChainConfig, ChainEnv, ChainPolicy, chain_env
from .labyrinth import LabMap, LabyrinthEnv, RandomHeading, labyrinth_env, load_map
from .mountain_car import MountainCarEnv, NearOptimalEps, mountain_car_env

__all__ = [
    "ChainConfig", "ChainEnv", "ChainPolicy", "chain_env",
    "LabMap", "LabyrinthEnv", "RandomHeading", "labyrinth_env", "load_map",
    "MountainCarEnv", "NearOptimalEps", "mountain_car_env",
    "make_env",
]


def make_env(name: str, **params):
    """Build an environment from a short name.

    ``chain`` (params k, p, mu, sigma), ``labyrinth-<0..5>`` or ``labyrinth``
    with ``map`` (index or JSON path; params step_size, p_end), and
    ``mountain-car`` (params gamma, eps).
    """
    if name == "chain":
        return chain_env(ChainConfig(**params))
    if name.startswith("labyrinth"):
        params = dict(params)
        lab = params.pop("map", None)
        if lab is None:
            lab = name.split("-", 1)[1] if "-" in name else 0
        return labyrinth_env(lab, **params)
    if name == "mountain-car":
        return mountain_car_env(**params)
    raise ValueError(f"unknown environment {name!r}")
