import sys

from flatforge.data.pipeline import main

sys.exit(main())
