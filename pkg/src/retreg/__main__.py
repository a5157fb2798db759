"""Allow ``python -m retreg`` as an alias for the ``retreg`` script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
