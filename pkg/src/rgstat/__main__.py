import sys

from rgstat.cli import main

sys.exit(main())
