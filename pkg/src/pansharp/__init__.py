"""Pan-sharpening toolkit: degradation models, a gradient-projection
solver, an unrolled fusion network with its own autodiff engine,
classical baselines, and quality metrics."""

__version__ = "0.1.0"
