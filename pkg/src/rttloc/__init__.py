"""Delay-based geolocation of Internet hosts from crowdsourced wireless landmarks."""

__version__ = "0.1.0"
