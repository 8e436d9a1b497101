import sys

from .clirun import main

sys.exit(main())
