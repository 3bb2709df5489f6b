"""Configuration module for the UWB EM-MAP link simulator."""
