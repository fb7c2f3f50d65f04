"""Flow surrogates with exact periodic boundaries for DLD unit cells."""

__version__ = "0.1.0"
