import sys
from pathlib import Path

# make the shared gradcheck helper importable from any test module
sys.path.insert(0, str(Path(__file__).parent))
