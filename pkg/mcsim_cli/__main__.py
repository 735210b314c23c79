import sys

from mcsim_cli.main import main

sys.exit(main())
