import sys

from layerscat.cli import main

sys.exit(main())
