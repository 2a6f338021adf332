#!/usr/bin/env python3
"""
Version-independent wrapper for the renormalized-solution runner.
Currently points to renorm_run_v1.py.
"""

import sys

from renorm_run_v1 import main


if __name__ == '__main__':
    sys.exit(main())
