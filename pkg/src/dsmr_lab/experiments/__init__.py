"""Configuration, studies, reports and command line."""
