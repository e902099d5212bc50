#!/usr/bin/env python3
"""
Test runner for the Deep Language Network trainer.

unittest modules are listed per category below; the hypothesis properties and
the fixture-based client tests run under pytest in a subprocess.
"""

import argparse
import os
import subprocess
import sys
import time
import unittest

# Add the project root to the path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

UNITTEST_MODULES = {
    'unit': [
        'test_templates', 'test_toy_lm', 'test_lm_backend', 'test_scoring', 'test_oracle',
        'test_evalkit', 'test_random_streams', 'test_dln1', 'test_dln2', 'test_baselines',
        'test_config_handler', 'test_output_manager', 'test_experiment_runner',
        'test_centralized_logger', 'test_cli', 'test_imports',
    ],
    'functional': ['test_toy_learning', 'test_cli_integration', 'test_live_endpoint'],
}

PYTEST_TARGETS = {
    'property': [os.path.join('tests', 'property')],
    'unit': [os.path.join('tests', 'unit', 'test_completion_client.py')],
}


def build_suite(category):
    """Load one category; returns the suite and the modules that failed to import."""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    broken = []
    for name in UNITTEST_MODULES.get(category, []):
        dotted = f'tests.{category}.{name}'
        try:
            loaded = loader.loadTestsFromName(dotted)
        except ImportError as e:
            broken.append(dotted)
            print(f"  ❌ {dotted}: {e}")
            continue
        print(f"  ✅ {dotted}: {loaded.countTestCases()} tests")
        suite.addTest(loaded)
    return suite, broken


def run_pytest(targets):
    if not targets:
        return 0
    print(f"🎲 pytest {' '.join(targets)}")
    return subprocess.run([sys.executable, '-m', 'pytest', '-q', *targets], cwd=project_root).returncode


def run_category(category):
    print(f"📋 {category}")
    suite, broken = build_suite(category)
    failed = bool(broken)
    if suite.countTestCases():
        result = unittest.TextTestRunner(verbosity=2, stream=sys.stdout).run(suite)
        failed |= not result.wasSuccessful()
    failed |= run_pytest(PYTEST_TARGETS.get(category, [])) != 0
    return failed


def main():
    categories = sorted(set(UNITTEST_MODULES) | set(PYTEST_TARGETS))
    parser = argparse.ArgumentParser(description='Run the Deep Language Network tests')
    parser.add_argument('--category', '-c', choices=categories, help='Run one category')
    parser.add_argument('--test', '-t', help='Run one dotted unittest name')
    args = parser.parse_args()

    if args.test:
        result = unittest.TextTestRunner(verbosity=2).run(unittest.TestLoader().loadTestsFromName(args.test))
        return 0 if result.wasSuccessful() else 1

    started = time.time()
    selected = [args.category] if args.category else ['unit', 'functional', 'property']
    failures = [category for category in selected if run_category(category)]

    print("=" * 60)
    print(f"⏱  {time.time() - started:.2f} seconds")
    if failures:
        print(f"❌ Failing categories: {', '.join(failures)}")
        return 1
    print("🎉 All tests passed!")
    return 0


if __name__ == '__main__':
    sys.exit(main())
