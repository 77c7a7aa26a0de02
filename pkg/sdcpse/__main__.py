import sys

from sdcpse.cli import main

sys.exit(main())
