import sys

from rkbs_svm.cli import main

sys.exit(main())
