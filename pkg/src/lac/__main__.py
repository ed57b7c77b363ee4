import sys

from lac.cli import main

sys.exit(main())
