import sys

from sdaevar.cli import main

sys.exit(main())
