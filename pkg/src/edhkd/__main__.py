import sys

from edhkd.cli import main

sys.exit(main())
