"""Networked device-free sensing simulator for cellular ISAC.

Base stations estimate echo ranges from OFDM channel taps (sparse recovery),
and a central processor associates those ranges to targets, discards NLOS
and clutter echoes, and localizes every target.
"""
__version__ = "0.1.0"
