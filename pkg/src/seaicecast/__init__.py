"""Weekly sea-ice concentration forecasting: a small CNN engine, a gridded
data pipeline, MAE/SSIM objectives, learned ensembling of the CNN and
climatology forecasts, and ice-edge distance verification."""

__version__ = "0.1.0"
