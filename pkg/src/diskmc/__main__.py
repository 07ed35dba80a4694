import sys

from diskmc.cli import main

sys.exit(main())
