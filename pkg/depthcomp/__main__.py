"""Allow `python -m depthcomp`."""
import sys

from depthcomp.main import main

sys.exit(main())
