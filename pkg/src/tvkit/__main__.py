import sys

from tvkit.cli import main

sys.exit(main())
