"""Write the synthetic test surfaces as OBJ files."""
import argparse
import logging
from pathlib import Path

from gridshell import fixtures
from gridshell.mesh import save_obj

log = logging.getLogger("make_fixtures")

SURFACES = {
    "flat_square": lambda: fixtures.grid(8, 8, 8.0, 8.0),
    "jittered_square": lambda: fixtures.jittered_square(40, 10.0, 0.3, 0),
    "paraboloid": lambda: fixtures.paraboloid(16, 10.0, 2.5),
    "strip": lambda: fixtures.strip(6.0, 2.0, 24, 8),
    "disk": lambda: fixtures.disk(48, 8, 5.0),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path, help="output directory")
    ap.add_argument("--only", nargs="+", choices=sorted(SURFACES))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.only or sorted(SURFACES):
        mesh = SURFACES[name]()
        save_obj(mesh, args.out / f"{name}.obj")
        log.info("%s: %d vertices, %d triangles", name, mesh.n_vertices, mesh.n_triangles)


if __name__ == "__main__":
    main()
