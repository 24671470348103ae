"""Desk-scale simulator and supervised autonomy stack for a vehicle-mounted arm."""

__version__ = "0.1.0"
