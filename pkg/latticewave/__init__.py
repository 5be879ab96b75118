"""
latticewave - 全離散（BDF 時間、格點空間）FitzHugh-Nagumo 行波的求解與驗證
"""

__version__ = "0.1.0"
