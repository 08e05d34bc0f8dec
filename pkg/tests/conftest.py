import pathlib
import sys

# allow running the suite from a fresh checkout without installation
try:
    import czkit  # noqa: F401
except ImportError:
    sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))
