import sys

from savn.cli import main

sys.exit(main())
