"""Entry point for running san_attn as a module.

Usage:
    python -m san_attn command=params [overrides...]
    python -m san_attn command=bench model=bench
"""

import sys

from san_attn.cli import main

if __name__ == "__main__":
    sys.exit(main())
