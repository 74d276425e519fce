"""
ScoreDVI Main Entry Point

Allows running ScoreDVI as a module: python -m scoredvi
"""

from .cli import main

if __name__ == "__main__":
    main()
