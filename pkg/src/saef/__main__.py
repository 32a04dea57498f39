import sys

from saef.cli import main

sys.exit(main())
