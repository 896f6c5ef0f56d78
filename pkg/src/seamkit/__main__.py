import sys

from seamkit.cli import main

sys.exit(main())
