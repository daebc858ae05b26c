import sys

from memgrad.cli import main

sys.exit(main())
