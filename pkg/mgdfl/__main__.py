"""`python -m mgdfl`."""

import sys

from mgdfl.main import main

sys.exit(main())
