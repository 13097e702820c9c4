from .robot import RobotModel, default_robot
from .terrain import Terrain, make_terrain
from .world import Action, BipedSim, ContactReport, SimDiverged, SimState

__all__ = [
    "Action", "BipedSim", "ContactReport", "RobotModel", "SimDiverged",
    "SimState", "Terrain", "default_robot", "make_terrain",
]
