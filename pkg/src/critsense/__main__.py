import sys

from critsense.cli import main

sys.exit(main())
