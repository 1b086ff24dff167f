"""Forward and inverse scattering by periodic layers with anisotropic contrast."""

__version__ = "0.1.0"
