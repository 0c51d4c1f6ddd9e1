import sys

from mppi_lab.cli import main

sys.exit(main())
