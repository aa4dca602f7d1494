"""Configuration, persistence, experiment drivers and the command-line entry point."""
