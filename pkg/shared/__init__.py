"""Core model, analysis and simulation for mcsim."""
