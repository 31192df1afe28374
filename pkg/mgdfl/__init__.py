"""mgdfl - CVaR-guided decision-focused forecasting for two-stage robust microgrid dispatch."""

__version__ = "1.0"
