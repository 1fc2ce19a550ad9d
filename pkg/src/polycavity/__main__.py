import sys

from polycavity.cli import main

sys.exit(main())
