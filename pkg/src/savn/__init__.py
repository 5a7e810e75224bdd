"""Grid-world laboratory for audio-visual navigation against a sound attacker."""

__version__ = "0.1.0"
