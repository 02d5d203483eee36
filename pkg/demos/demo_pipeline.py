"""End-to-end run of the built-in demo configuration.

Writes references, the traffic trajectory, composed frames with annotations
and LiDAR scans, then runs again and checks the manifests match.

    python3 demos/demo_pipeline.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

from aads import demo_config, run_pipeline


def main(out_dir="demo_out/pipeline"):
    cfg = demo_config(seed=7)
    first = run_pipeline(cfg, out_dir, threads=1)
    for name, digest in first["files"].items():
        print(f"{digest[:12]}  {name}")
    with tempfile.TemporaryDirectory() as tmp:
        second = run_pipeline(cfg, Path(tmp), threads=2)
    same = first["files"] == second["files"]
    print(f"{len(first['files'])} files, rerun with two threads identical: {same}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
