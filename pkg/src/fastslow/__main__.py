import sys

from fastslow.harness.cli import main

sys.exit(main())
