"""Synthetic OLTP workload generation from production statistics.

Statistics are extracted on the production side (data characteristics,
transaction logic, access distributions) and replayed on the evaluation side
as a synthetic database and workload; a conflict simulator measures both.
"""

__version__ = "0.1.0"
