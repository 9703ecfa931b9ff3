import sys

from hoimotion.cli import main

sys.exit(main())
