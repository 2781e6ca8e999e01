"""cardiorom: probabilistic reduced-order left-ventricle mechanics.

Submodules: onefiber (pressure-volume simulation), geometry (idealized
truncated ellipsoids), podgeom (population sampling + shape modes), gp
(Gaussian-process parameter map), calibration (Bayesian correction-factor
inference), oracle (synthetic full-order data and file ingestion), pipeline
(offline/online orchestration and CLI).
"""

__version__ = "0.1.0"
