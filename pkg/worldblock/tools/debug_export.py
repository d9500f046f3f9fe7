#!/usr/bin/env python3

import argparse
import os
import sys

import numpy as np
from PIL import Image

from _utils import print_confirm, print_error, print_info, set_log_level


def export_debug_images(spec_path, out_dir, seed=None):
    """
    Writes the intermediate layout products of a scene spec.

    Args:
            spec_path (str): Path to the scene spec JSON file.
            out_dir (str): Directory receiving the images.
            seed (int, optional): Overrides the scene spec seed.

    Returns:
            A dict mapping each product to the file written.
    """
    from worldblock.generator import stage_seed
    from worldblock.partition import assign_roles, partition
    from worldblock.placement import place_all
    from worldblock.scene_spec import parse_scene_spec
    from worldblock.terrain import generate_heightfield, heightfield_to_png, slope_deg

    with open(spec_path, "r", encoding="utf-8") as f:
        spec = parse_scene_spec(f.read())
    seed = spec.seed if seed is None else seed
    os.makedirs(out_dir, exist_ok=True)

    hf = generate_heightfield(spec, stage_seed(seed, "terrain"))
    rs = partition(
        spec.extent,
        spec.partition.strategy,
        spec.partition.params,
        stage_seed(seed, "partition"),
        spec.partition.region_count_hint,
    )
    rs = assign_roles(rs, spec, stage_seed(seed, "roles"))
    ps = place_all(rs, hf, spec, stage_seed(seed, "placement"))

    written = {
        "heightfield": os.path.join(out_dir, "heightfield.png"),
        "slope": os.path.join(out_dir, "slope.png"),
        "regions": os.path.join(out_dir, "regions.svg"),
        "occupancy": os.path.join(out_dir, "occupancy.png"),
    }
    heightfield_to_png(hf, written["heightfield"], spec.terrain.elevation_range)

    # 0..90 degrees onto 8 bits, north up like the heightfield.
    slope = np.clip(slope_deg(hf) / 90.0 * 255.0, 0, 255).astype(np.uint8)
    Image.fromarray(np.flipud(slope)).save(written["slope"], format="PNG")

    rs.to_svg(written["regions"])

    # Blocked cells black, free cells white.
    occupancy = np.where(np.asarray(ps.occupancy), 0, 255).astype(np.uint8)
    Image.fromarray(np.flipud(occupancy)).save(written["occupancy"], format="PNG")

    print_info(f"[debug_export] {len(ps.placements)} placement(s), {len(rs.regions)} region(s)")
    return written


def main():
    """Main entry point for command-line usage."""
    parser = argparse.ArgumentParser(
        description="Export heightfield, slope, region and occupancy images for a scene spec.",
    )
    parser.add_argument(type=str, dest="spec", help="Path to the scene spec JSON file.")
    parser.add_argument(
        "-o",
        "--out",
        type=str,
        default="debug_export",
        metavar="DIR",
        help="Output directory. (default: debug_export)",
    )
    parser.add_argument("-s", "--seed", type=int, default=None, help="Override the scene spec seed.")
    parser.add_argument(
        "-d",
        "--debug",
        action="store_true",
        help="Enable debug output.",
    )
    args = parser.parse_args()
    set_log_level("DEBUG" if args.debug else "INFO", args.debug)

    try:
        written = export_debug_images(args.spec, args.out, args.seed)
    except Exception as e:
        print_error(f"[debug_export] An error occurred: {e}")
        sys.exit(1)
    for name, path in written.items():
        print_confirm(f"-> {name}: {path}")


if __name__ == "__main__":
    main()
