import sys

from eegdec.cli import main

sys.exit(main())
