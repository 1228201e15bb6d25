"""Command line entry point.

Reads a manifest file listing one image path per line (blank lines and
'#' comments ignored; relative paths resolve against the manifest's own
directory), embeds every image, and writes the store plus a
"<out>.manifest.json" recording the embedding layer, digests of inputs
and output, and any per-image failures. Exit code 0 means every image
was embedded, 1 means some images were skipped, 2 means the job never
ran (bad arguments, unreadable paths, weight-load failure).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from vggfeat.extract import ExtractJob, run_extraction
from vggfeat.model import (
    EMBEDDING_DIM,
    EMBEDDING_LAYER,
    WeightsError,
    load_feature_extractor,
)

log = logging.getLogger("vggfeat")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vggfeat",
        description="Extract 4096-d VGG-19 activations for a manifest of images.")
    parser.add_argument("manifest", help="file with one image path per line")
    parser.add_argument("--weights", required=True,
                        help="VGG-19 state-dict file (torch.save format)")
    parser.add_argument("--out", required=True, help="embedding store to write")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--device", choices=["cpu", "accelerator"], default="cpu")
    parser.add_argument("--text", action="store_true",
                        help="write the text store format instead of binary")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def read_manifest(path: Path) -> list[Path]:
    entries: list[Path] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        entries.append(p if p.is_absolute() else path.parent / p)
    return entries


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    manifest_path = Path(args.manifest)
    try:
        paths = read_manifest(manifest_path)
    except OSError as exc:
        log.error("cannot read manifest %s: %s", args.manifest, exc)
        return 2
    try:
        job = ExtractJob(image_paths=tuple(paths), output_path=Path(args.out),
                         batch_size=args.batch_size, device=args.device)
        model = load_feature_extractor(args.weights, job.device)
    except (ValueError, WeightsError) as exc:
        log.error("%s", exc)
        return 2

    result = run_extraction(job, model, text=args.text)

    tool_manifest = {
        "command": "vggfeat",
        "embedding_layer": EMBEDDING_LAYER,
        "dim": EMBEDDING_DIM,
        "device": args.device,
        "batch_size": args.batch_size,
        "format": "text" if args.text else "binary",
        "input_manifest_sha256": _sha256(manifest_path),
        "weights_sha256": _sha256(Path(args.weights)),
        "output_sha256": _sha256(job.output_path),
        "n_images": len(job.image_paths),
        "n_written": result.n_written,
        "n_failed": len(result.failures),
        "failures": [{"path": p, "reason": r} for p, r in result.failures],
    }
    Path(f"{args.out}.manifest.json").write_text(
        json.dumps(tool_manifest, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")

    if result.failures:
        log.error("embedded %d of %d images; %d failed",
                  result.n_written, len(job.image_paths), len(result.failures))
        return 1
    log.info("embedded %d images into %s", result.n_written, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
