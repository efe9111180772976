import sys
from pathlib import Path

# lets test modules share fixtures defined in sibling files
sys.path.insert(0, str(Path(__file__).parent))
