"""Cold-start music recommendation: WMF factorization, content-to-factor
mapping networks, and multimodal late fusion."""

__version__ = "0.1.0"
