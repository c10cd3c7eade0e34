"""
Decision rules turning head outputs into taxonomic decisions.
"""
from .base_predictor import BasePredictor
from .flat_predictor import FlatRejectPredictor
from .rhc_predictor import BottomUpPredictor
from .rtc_predictor import TopDownPredictor

__all__ = ["BasePredictor", "BottomUpPredictor", "FlatRejectPredictor", "TopDownPredictor"]
