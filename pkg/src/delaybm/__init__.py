"""Packet-level simulation of shared-buffer datacenter switches with
delay-driven buffer management and classic baselines."""

__version__ = "0.1.0"
