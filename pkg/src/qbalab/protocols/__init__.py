"""Concrete protocols: demos, common coin, Bracha broadcast, SAVSS and phase voting."""
