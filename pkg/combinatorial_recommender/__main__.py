# Standard library imports
import sys

# Third party imports

# Local application imports
from combinatorial_recommender.cli import main

sys.exit(main())
