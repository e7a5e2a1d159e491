import sys
from pathlib import Path

# lets tests import the oracle helpers as plain modules
sys.path.insert(0, str(Path(__file__).parent))
