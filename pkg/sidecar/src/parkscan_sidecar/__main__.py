import sys

from parkscan_sidecar.serve import main

sys.exit(main())
