"""
Setup check for the Domain Shift Toolkit.
Run this to verify that all dependencies are installed and the configuration is valid.

    python check_setup.py [config.json]
"""

import importlib
import os
import sys


DEPENDENCIES = [
    ('numpy', 'numpy'),
    ('scipy', 'scipy'),
    ('PIL', 'Pillow'),
    ('sklearn', 'scikit-learn'),
    ('maxflow', 'PyMaxflow'),
    ('matplotlib', 'matplotlib'),
    ('pandas', 'pandas'),
]

MODULES = [
    'src.errors',
    'src.config',
    'src.core',
    'src.features',
    'src.shift',
    'src.augment',
    'src.construct',
    'src.graphcut',
    'src.weaklabel',
    'src.evaluation',
    'src.reporting',
    'src.main',
]


def check_imports() -> bool:
    """Check that every third-party dependency can be imported."""
    print("Checking dependencies...")
    missing = []

    for module, package in DEPENDENCIES:
        try:
            importlib.import_module(module)
            print(f"✓ {package}")
        except ImportError:
            missing.append(package)
            print(f"✗ {package} - MISSING")

    if missing:
        print(f"\n❌ Missing dependencies: {', '.join(missing)}")
        print("Run: pip install -r requirements.txt")
        return False
    print("\n✅ All dependencies installed!")
    return True


def check_config(path: str) -> bool:
    """Check that the configuration file loads and validates."""
    print("\nChecking configuration...")

    if not os.path.exists(path):
        print(f"- {path} not found, built-in defaults will be used")
        path = None
    else:
        print(f"✓ {path} exists")

    try:
        from src.config import Config
        config = Config(path)
        config.validate()
        print("✓ Configuration is valid")

        print("\nCurrent settings:")
        print(f"  Seed: {config.seed}, jobs: {config.jobs}")
        print(f"  Extractor: {config.extractor_layers} layers, channels {config.extractor_channels}, "
              f"kernel {config.kernel_size}, stride {config.stride}")
        print(f"  Components: connectivity {config.connectivity}, min area {config.min_area}")
        print(f"  GrabCut: {config.gmm_components} components, {config.max_iterations} iterations, "
              f"gamma {config.gamma}")
        print(f"  Classes: {config.num_classes}")
        return True

    except Exception as e:
        print(f"✗ Configuration error: {e}")
        return False


def check_src_modules() -> bool:
    """Check that all source modules import."""
    print("\nChecking source modules...")
    errors = []

    for module in MODULES:
        try:
            importlib.import_module(module)
            print(f"✓ {module}")
        except Exception as e:
            errors.append(f"{module}: {e}")
            print(f"✗ {module} - ERROR: {e}")

    if errors:
        print("\n❌ Module import errors found")
        return False
    print("\n✅ All source modules imported successfully!")
    return True


def check_pipeline() -> bool:
    """Run the extractor and the shift metric on a tiny synthetic input."""
    print("\nChecking pipeline...")

    try:
        import numpy as np
        from src.core import ChannelMeanMatrix, ImageRaster
        from src.features import build_filter_bank, channel_means, extract
        from src.shift import representation_shift

        bank = build_filter_bank(0)
        print(f"✓ Filter bank built ({bank.describe()})")

        rng = np.random.default_rng(0)
        rows = []
        for _ in range(4):
            image = ImageRaster(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
            rows.append(channel_means(extract(bank, image)))
        matrix = ChannelMeanMatrix(np.vstack(rows))
        print(f"✓ Extracted {matrix.n_images}×{matrix.n_channels} channel means")

        report = representation_shift(matrix, matrix)
        if report.representation_shift != 0.0:
            print(f"✗ Self-shift is {report.representation_shift}, expected 0")
            return False
        print("✓ Self-shift is zero")
        return True

    except Exception as e:
        print(f"✗ Pipeline error: {e}")
        return False


def main():
    """Run all checks."""
    config_path = sys.argv[1] if len(sys.argv) > 1 else 'config.json'

    print("=" * 80)
    print("Domain Shift Toolkit - Setup Check")
    print("=" * 80)
    print()

    results = [
        ("Dependencies", check_imports()),
        ("Configuration", check_config(config_path)),
        ("Source Modules", check_src_modules()),
        ("Pipeline", check_pipeline()),
    ]

    print("\n" + "=" * 80)
    print("Check Summary:")
    print("=" * 80)

    all_passed = True
    for name, passed in results:
        status = "✅ PASSED" if passed else "❌ FAILED"
        print(f"{name}: {status}")
        if not passed:
            all_passed = False

    print("=" * 80)

    if all_passed:
        print("\n🎉 All checks passed! Your setup is ready.")
        print("Run the toolkit with: python -m src.main --help")
    else:
        print("\n⚠️  Some checks failed. Please fix the issues above.")
        sys.exit(1)


if __name__ == '__main__':
    main()
