#!/usr/bin/env python
"""Download the Stanford bunny and write the 2960-point cloud used by `bunny-curvature`.

The full-resolution scan is down-sampled by farthest-point sampling and given PCA normals
oriented away from the centroid. The archive is kept in the cache directory so that later
runs work offline.

Usage:
    python scripts/download_bunny.py [output.csv] [--cache-dir DIR]
"""

import argparse
from pathlib import Path

from sdcpse._constants import BUNNY_POINTS, BUNNY_URL
from sdcpse.bench import bunny_point_cloud, fetch_bunny, save_point_cloud


def download_bunny(output: Path, cache_dir: Path, n_points: int = BUNNY_POINTS) -> None:
    """Fetch the archive (or reuse the cached copy) and write the down-sampled cloud."""
    print(f"Fetching {BUNNY_URL}")
    print(f"(archive cached in {cache_dir})")
    archive = fetch_bunny(cache_dir)
    if archive is None:
        print("FAILED: the archive is not available")
        raise SystemExit(1)

    print(f"  ↓ Down-sampling to {n_points} points and estimating normals...", end=" ", flush=True)
    cloud = bunny_point_cloud(archive, n_points)
    save_point_cloud(cloud, output)
    print(f"({output.stat().st_size / 1024:.1f} KB)")

    print()
    print(f"Done! Run: sdcpse bunny-curvature --input {output}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("output", nargs="?", type=Path, default=Path("bunny_2960.csv"))
    parser.add_argument("--cache-dir", type=Path, default=Path("data"))
    parser.add_argument("--points", type=int, default=BUNNY_POINTS)
    args = parser.parse_args()
    download_bunny(args.output, args.cache_dir, args.points)
