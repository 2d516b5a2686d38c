__title__ = "picore"
__version__ = "0.1.0"
__summary__ = "Physics-informed coreset selection for neural operator training"
__author__ = "picore developers"
__uri__ = "https://github.com/picore/picore"
