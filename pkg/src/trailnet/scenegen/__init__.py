"""Procedural trail worlds, software rendering and the three-camera capture rig."""
from .render import CAMERA, Camera, render
from .styles import STYLES, StylePack, get_style
from .world import Pose, TrailPoint, TrailWorld, WorldParams, closest_on_trail, generate_world

__all__ = [
    "CAMERA", "Camera", "Pose", "STYLES", "StylePack", "TrailPoint", "TrailWorld",
    "WorldParams", "closest_on_trail", "generate_world", "get_style", "render",
]
