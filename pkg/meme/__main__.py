"""Allow running the pipeline with python -m meme."""

import sys

from .cli import main

sys.exit(main())
