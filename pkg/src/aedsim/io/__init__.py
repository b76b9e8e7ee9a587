"""Configuration, records and the command line."""
