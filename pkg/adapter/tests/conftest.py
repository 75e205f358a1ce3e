import sys
from pathlib import Path

# make the flat adapter module importable without installation
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
