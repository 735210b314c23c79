"""Command-line front end for mcsim."""
