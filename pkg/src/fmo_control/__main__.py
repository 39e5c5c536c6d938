import sys

from fmo_control.cli import main

sys.exit(main())
