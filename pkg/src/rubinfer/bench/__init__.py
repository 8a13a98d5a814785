"""Experiment runners, CSV records and SVG charts."""
from .records import FIELDS, BenchRecord, read_csv, write_csv

__all__ = ["FIELDS", "BenchRecord", "read_csv", "write_csv"]
