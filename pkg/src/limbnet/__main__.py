import sys

from limbnet.cli import main

sys.exit(main())
