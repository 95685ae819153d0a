import sys

from ppba.cli import main

sys.exit(main())
