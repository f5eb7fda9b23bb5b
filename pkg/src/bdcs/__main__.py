import sys

from bdcs.cli import main

sys.exit(main())
