from airopt.cli import main
import sys

sys.exit(main())
