import sys

from shapedist.cli import main

sys.exit(main())
