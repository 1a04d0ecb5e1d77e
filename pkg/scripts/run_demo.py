"""Solve the bundled coupled game end to end and verify its own output.

Runs the CLI twice: `solve` on configs/coupled_game.json, then `verify`
on the controls.csv it wrote. Artifacts land in out/demo/.
"""

import pathlib
import sys

from fbsdegames.cli import main

ROOT = pathlib.Path(__file__).resolve().parent.parent
CONFIG = ROOT / "configs" / "coupled_game.json"
OUT = ROOT / "out" / "demo"


def run() -> int:
    code = main(["solve", "--config", str(CONFIG), "--out", str(OUT)])
    if code != 0:
        return code
    print(f"artifacts in {OUT}")
    return main([
        "verify",
        "--config", str(CONFIG),
        "--out", str(OUT),
        "--controls", str(OUT / "controls.csv"),
    ])


if __name__ == "__main__":
    sys.exit(run())
