"""
Development entry point. Run with: python -m main <command>
"""

import sys

from arhscope.cli import main

if __name__ == "__main__":
    sys.exit(main())
