"""Two-pass deliberation SLU with a CTC non-autoregressive decoder, at desk scale."""

__version__ = "0.1.0"
