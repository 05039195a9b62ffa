"""Render appearance bundles. "alpine-a" is the training look; "alpine-b" is a
shifted look used to measure transfer."""
from __future__ import annotations

from dataclasses import dataclass, replace

from ..errors import ConfigurationError


@dataclass(frozen=True)
class StylePack:
    name: str
    trail_color: tuple[int, int, int]
    ground_color: tuple[int, int, int]
    sky_top: tuple[int, int, int]
    sky_bottom: tuple[int, int, int]
    tree_color: tuple[int, int, int]
    rock_color: tuple[int, int, int]
    trail_noise: float  # amplitude in colour units
    trail_noise_scale: float  # metres per noise cell
    ground_noise: float
    ground_noise_scale: float
    edge_dither: float  # metres
    tree_density: float  # trees per 100 m^2
    fog: float  # per metre
    seed: int

    def __post_init__(self):
        for key in ("trail_color", "ground_color", "sky_top", "sky_bottom", "tree_color", "rock_color"):
            rgb = getattr(self, key)
            if len(rgb) != 3 or any(not 0 <= int(c) <= 255 for c in rgb):
                raise ConfigurationError(f"style {self.name}: {key} {rgb} is not an RGB byte triple")
        for key in ("trail_noise", "trail_noise_scale", "ground_noise", "ground_noise_scale",
                    "edge_dither", "tree_density", "fog"):
            if getattr(self, key) < 0:
                raise ConfigurationError(f"style {self.name}: {key} must be non-negative")
        if self.trail_noise_scale == 0 or self.ground_noise_scale == 0:
            raise ConfigurationError(f"style {self.name}: noise scales must be positive")

    def degenerate(self) -> "StylePack":
        """Same colours with every noise source, tree and fog switched off."""
        return replace(self, name=self.name + "-flat", trail_noise=0.0, ground_noise=0.0,
                       edge_dither=0.0, tree_density=0.0, fog=0.0)


STYLES = {
    "alpine-a": StylePack(
        name="alpine-a",
        trail_color=(150, 118, 80),
        ground_color=(72, 112, 48),
        sky_top=(88, 138, 208),
        sky_bottom=(188, 212, 232),
        tree_color=(32, 78, 38),
        rock_color=(122, 120, 114),
        trail_noise=16.0,
        trail_noise_scale=0.35,
        ground_noise=22.0,
        ground_noise_scale=1.2,
        edge_dither=0.3,
        tree_density=1.2,
        fog=0.008,
        seed=11,
    ),
    "alpine-b": StylePack(
        name="alpine-b",
        trail_color=(168, 152, 126),
        ground_color=(98, 106, 58),
        sky_top=(122, 132, 152),
        sky_bottom=(204, 204, 208),
        tree_color=(46, 70, 44),
        rock_color=(142, 136, 124),
        trail_noise=28.0,
        trail_noise_scale=0.25,
        ground_noise=34.0,
        ground_noise_scale=0.8,
        edge_dither=0.5,
        tree_density=2.4,
        fog=0.02,
        seed=23,
    ),
}


def get_style(name: str) -> StylePack:
    try:
        return STYLES[name]
    except KeyError:
        raise ConfigurationError(f"unknown style {name!r}; known: {', '.join(STYLES)}") from None
