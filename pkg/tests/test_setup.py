"""
Quick test script to verify your setup is ready
Run this before starting a simulation campaign
"""
import importlib
import sys

REQUIRED = {
    'NumPy': 'numpy',
    'SciPy': 'scipy',
    'pandas': 'pandas',
    'tomli-w': 'tomli_w',
    'python-dotenv': 'dotenv',
    'colorlog': 'colorlog',
}


def missing_packages():
    """Names of required packages that fail to import"""
    failed = []
    for name, module in REQUIRED.items():
        try:
            importlib.import_module(module)
        except ImportError:
            failed.append(name)
    return failed


def test_imports():
    """All required packages are installed"""
    assert missing_packages() == []


def test_python_version():
    """tomllib ships with Python 3.11"""
    assert sys.version_info >= (3, 11)


def test_package_imports():
    """The package and its command line load"""
    from dampspde import __version__
    from dampspde.cli import build_parser

    assert __version__
    assert build_parser().prog == 'dampspde'


def main():
    print("=" * 60)
    print("DAMPED SPDE LABORATORY - SETUP TEST")
    print("=" * 60)

    failed = missing_packages()
    for name in REQUIRED:
        print(f"{'❌' if name in failed else '✅'} {name}")

    if failed:
        print(f"\n❌ Missing packages: {', '.join(failed)}")
        print("\nTo install missing packages, run:")
        print("   pip install -r requirements.txt")
        return False

    print("\n✅ All packages found. Try:")
    print("   python run.py check --config scenarios/plate_point_1d.toml")
    return True


if __name__ == "__main__":
    sys.exit(0 if main() else 1)
