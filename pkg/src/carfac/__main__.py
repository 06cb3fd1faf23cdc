import sys

from carfac.cli import main

sys.exit(main())
