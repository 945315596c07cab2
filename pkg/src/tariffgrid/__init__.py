"""Tariff design, prosumer PV/battery optimisation and LV network impact."""

__version__ = "0.1.0"
