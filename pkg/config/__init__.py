"""Configuration module for mcsim."""
