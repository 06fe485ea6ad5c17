"""Command-line entry point: ``seds synth|train|eval|gradcheck|ablate``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("seds")


class CliError(Exception):
    pass


CONFIG_DIR = Path(__file__).parent / "configs"


def resolve_config(path) -> Path:
    """A path on disk, else the name of a shipped config (``desk_train`` or ``desk_train.json``)."""
    p = Path(path)
    if p.is_file():
        return p
    shipped = CONFIG_DIR / (p.name if p.suffix == ".json" else p.name + ".json")
    if p.parent == Path(".") and shipped.is_file():
        return shipped
    raise CliError(f"file not found: {p}")


def _read_json(path) -> dict:
    p = resolve_config(path)
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{p} is not valid JSON: {exc}") from exc


def cmd_synth(args) -> int:
    from .data.synth import SyntheticSpec, synth_dataset

    raw = _read_json(args.spec)
    splits = raw.pop("splits", {"train": 200, "val": 50, "test": 50})
    spec = SyntheticSpec.from_dict(raw)
    path = synth_dataset(spec, args.out, splits["train"], splits["val"], splits["test"])
    print(f"wrote {path}")
    return 0


def cmd_train(args) -> int:
    from .train import TrainConfig, train

    cfg = TrainConfig.from_dict(_read_json(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    res = train(cfg, args.data, args.out, max_steps=args.max_steps)
    print(json.dumps({"best": str(res.best), "last": str(res.last), "best_val_r1": res.best_val_r1}))
    return 0


def cmd_eval(args) -> int:
    from .evaluate import evaluate, write_reports

    ckpt = Path(args.ckpt)
    if not ckpt.is_file():
        raise CliError(f"checkpoint not found: {ckpt}")
    export = [s for s in args.export_sim.split(",") if s] if args.export_sim else None
    out = Path(args.out) if args.out else ckpt.parent / f"report_{args.split}_{args.modality}.json"
    reports = evaluate(ckpt, args.data, args.split, args.modality, export_ids=export, out_dir=out.parent)
    write_reports(out, reports, ckpt, args.split, args.modality)
    for r in reports:
        print(f"{r.direction}: R@1 {r.r1:.1f}  R@5 {r.r5:.1f}  R@10 {r.r10:.1f}  MedR {r.medr:g}")
    print(f"report: {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    records = run_suite([args.module], range(args.seeds))
    failed = [r for r in records if not r.passed]
    by_case: dict = {}
    for r in records:
        key = (r.module, r.name)
        by_case[key] = max(by_case.get(key, 0.0), r.max_rel_err)
    for (mod, name), err in by_case.items():
        status = "FAIL" if any(f.module == mod and f.name == name for f in failed) else "ok"
        print(f"{status:4s} {mod:10s} {name:24s} max rel err {err:.2e}")
    print(f"{len(records) - len(failed)}/{len(records)} checks passed")
    return 1 if failed else 0


def run_grid(grid: dict, out_dir: Path, data=None, root=None) -> list[dict]:
    """Train and evaluate every (arm, seed) of an ablation grid.

    A string ``base`` is a config path, relative to ``root`` if given.
    """
    from .evaluate import evaluate
    from .train import TrainConfig, train

    base = grid.get("base", {})
    if isinstance(base, str):
        cand = Path(root) / base if root is not None else Path(base)
        base = _read_json(cand if cand.is_file() else base)
    data = data or grid.get("data")
    if data is None:
        raise CliError("ablation grid needs a dataset (grid 'data' key or --data)")
    seeds = grid.get("seeds", [0])
    split = grid.get("split", "test")
    rows = []
    for arm in grid["arms"]:
        name = arm["name"]
        for seed in seeds:
            cfg_dict = _merge(base, arm.get("overrides", {}))
            cfg_dict["seed"] = seed
            cfg = TrainConfig.from_dict(cfg_dict)
            res = train(cfg, data, out_dir / f"{name}_seed{seed}")
            row = {"arm": name, "seed": seed}
            for modality in grid.get("modalities", ["fused"]):
                t2v, v2t = evaluate(res.best, data, split, modality)
                row[f"{modality}_t2v_r1"] = t2v.r1
                row[f"{modality}_v2t_r1"] = v2t.r1
                row[f"{modality}_t2v_medr"] = t2v.medr
            rows.append(row)
            log.info("%s", row)
    return rows


def _merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def cmd_ablate(args) -> int:
    grid_path = resolve_config(args.grid)
    grid = _read_json(grid_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_grid(grid, out, args.data, root=grid_path.parent)
    (out / "ablation.json").write_text(json.dumps(rows, indent=1))
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {out / 'ablation.json'} and {out / 'ablation.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seds", description="Sign-language video/text retrieval toolkit.")
    p.add_argument("--version", action="version", version=f"seds {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic paired dataset")
    s.add_argument("--spec", required=True, help="synthetic spec JSON")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", required=True, help="training config JSON")
    s.add_argument("--data", required=True, help="dataset directory or manifest")
    s.add_argument("--out", required=True, help="run directory")
    s.add_argument("--seed", type=int, default=None, help="override the config seed")
    s.add_argument("--max-steps", type=int, default=None, help="stop early (schedule unchanged)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--modality", choices=["fused", "pose", "rgb"], default="fused")
    s.add_argument("--export-sim", default=None, help="comma-separated sample ids to dump similarity data for")
    s.add_argument("--out", default=None, help="report path (default: next to the checkpoint)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    s.add_argument("--module", choices=["all", "tensor", "encoders", "fusion", "objectives", "joint"], default="all")
    s.add_argument("--seeds", type=int, default=10)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ablate", help="run an ablation grid")
    s.add_argument("--grid", required=True, help="grid JSON")
    s.add_argument("--data", default=None, help="dataset (overrides the grid's 'data')")
    s.add_argument("--out", default="runs/ablation")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"seds: error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, KeyError, RuntimeError) as exc:
        print(f"seds: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
