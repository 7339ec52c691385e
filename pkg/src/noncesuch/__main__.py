import sys

from noncesuch.cli import main

sys.exit(main())
