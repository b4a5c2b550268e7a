import sys
from pathlib import Path

# Tests import the ml/ namespace package from the repository root
sys.path.insert(0, str(Path(__file__).parent))
