"""factline: validate, remediate and augment web-sourced tabular datasets."""

__version__ = "0.1.0"
