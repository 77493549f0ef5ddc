"""
Build Rule Pack

Zips a pack source tree (manifest.json + rules/*.rule) into a pack archive.
The archive is byte-identical for identical trees. The pack is loaded once
after building so a broken pack never leaves this script.

Usage:
    # Build the shipped default pack
    python -m scripts.build_pack --out default-pack.zip

    # Build another tree
    python -m scripts.build_pack path/to/pack --out my-pack.zip
"""
import argparse
import sys
from pathlib import Path

# Add backend directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import structlog

from app.core.config import settings
from app.core.exceptions import PackLoadError
from app.core.logging import configure_logging
from app.services.rule_packs import build_pack, load_pack

logger = structlog.get_logger()


def main() -> int:
    """Main entry point"""
    parser = argparse.ArgumentParser(description="Build a rule pack archive")
    parser.add_argument("directory", nargs="?", type=Path, default=settings.DEFAULT_PACK_DIR, help="Pack source tree")
    parser.add_argument("--out", type=Path, required=True, help="Output ZIP path")
    args = parser.parse_args()

    configure_logging(settings.LOG_LEVEL, settings.LOG_FORMAT)

    try:
        data = build_pack(args.directory)
        pack = load_pack(data)
    except PackLoadError as e:
        print("✗ Pack is invalid:")
        for error in e.errors:
            print(f"  {error}")
        return 1

    args.out.write_bytes(data)
    print(f"✓ {pack.name} {pack.version}: {len(pack.plans)} rules -> {args.out} ({len(data):,} bytes)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
