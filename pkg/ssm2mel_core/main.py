#!/usr/bin/env python3
"""
SSM2Mel - command-line entry point.

Runs the `ssm2mel` CLI from a source checkout without installing the package:

    python ssm2mel_core/main.py selftest
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from dotenv import load_dotenv

from ssm2mel.cli import main

# SSM2MEL_* settings may come from a local .env
load_dotenv()

if __name__ == "__main__":
    sys.exit(main())
