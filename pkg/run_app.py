#!/usr/bin/env python3
"""
Launch the results browser (app.py) with Streamlit.

    python run_app.py [--port 8502] [--root runs]
"""

import argparse
import importlib.util
import os
import subprocess
import sys

REQUIRED = ("streamlit", "pandas", "yaml", "dotenv")


def missing_dependencies():
    return [name for name in REQUIRED if importlib.util.find_spec(name) is None]


def launch(port: int, root: str = None) -> int:
    missing = missing_dependencies()
    if missing:
        print(f"[ERROR] Missing packages: {', '.join(missing)}")
        print("[TIP] Run: pip install -r requirements.txt")
        return 1

    env = dict(os.environ)
    if root:
        env["QRL_OUTPUT_ROOT"] = root
    print(f"[INFO] Results browser at http://localhost:{port} (Ctrl+C to stop)")
    try:
        return subprocess.run(
            [sys.executable, "-m", "streamlit", "run", "app.py",
             "--server.port", str(port), "--server.address", "localhost"],
            env=env, check=False).returncode
    except KeyboardInterrupt:
        print("\n[INFO] Stopped")
        return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Start the run browser")
    parser.add_argument("--port", type=int, default=8502)
    parser.add_argument("--root", help="output root holding the run directories")
    args = parser.parse_args()
    os.chdir(os.path.dirname(os.path.abspath(__file__)))
    sys.exit(launch(args.port, args.root))
