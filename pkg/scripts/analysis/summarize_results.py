#!/usr/bin/env python3
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict

import pandas as pd


BOUND_EXPERIMENTS = ("bound-multiclass", "bound-structured")


def read_manifest(run_dir: Path) -> Dict[str, Any]:
    path = run_dir / "manifest.json"
    if not path.exists():
        return {"experiment": run_dir.name, "seed": None, "ok": None}
    with path.open("r", encoding="utf-8") as f:
        return json.load(f)


def summarize_bound_csv(csv_path: Path) -> Dict[str, Any]:
    df = pd.read_csv(csv_path)
    # holds は "True"/"False" で書かれている
    holds = df["holds"].astype(str).str.lower() == "true"
    return {
        "n_draws": int(df.shape[0]),
        "m": int(df["m"].iloc[0]),
        "rho": float(df["rho"].iloc[0]),
        "delta": float(df["delta"].iloc[0]),
        "violation_fraction": float((~holds).mean()),
        "mean_lhs": float(df["lhs"].mean()),
        "mean_empirical_loss": float(df["empirical_loss"].mean()),
        "complexity_mean": float(df["complexity_mean"].iloc[0]),
        "mean_rhs": float(df["rhs"].mean()),
        "min_gap": float((df["rhs"] - df["lhs"]).min()),
    }


def summarize_generic_csv(csv_path: Path) -> Dict[str, Any]:
    df = pd.read_csv(csv_path)
    out: Dict[str, Any] = {"rows": int(df.shape[0])}
    if "holds" in df.columns:
        holds = df["holds"].astype(str).str.lower() == "true"
        out["violations"] = int((~holds).sum())
    return out


def main() -> None:
    import argparse

    ap = argparse.ArgumentParser()
    ap.add_argument(
        "--root",
        type=str,
        default="results",
        help="results root (will search **/manifest.json)",
    )
    ap.add_argument(
        "--out",
        type=str,
        default="results/summary.csv",
        help="output csv path",
    )
    args = ap.parse_args()

    root = Path(args.root)
    run_dirs = sorted({p.parent for p in root.glob("**/manifest.json")})

    rows = []
    for run_dir in run_dirs:
        meta = read_manifest(run_dir)
        for csv_path in sorted(run_dir.glob("results*.csv")):
            if meta.get("experiment") in BOUND_EXPERIMENTS:
                stat = summarize_bound_csv(csv_path)
            else:
                stat = summarize_generic_csv(csv_path)
            rows.append(
                {
                    "experiment": meta.get("experiment"),
                    "seed": meta.get("seed"),
                    "ok": meta.get("ok"),
                    "table": csv_path.name,
                    "path": run_dir.as_posix(),
                    **stat,
                }
            )

    out_df = pd.DataFrame(rows)
    sort_cols = [c for c in ["experiment", "seed", "table"] if c in out_df.columns]
    if sort_cols:
        out_df = out_df.sort_values(sort_cols, kind="mergesort")

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_df.to_csv(out_path, index=False, encoding="utf-8")

    print(f"found: {len(run_dirs)} runs")
    print(f"wrote: {out_path.as_posix()}")


if __name__ == "__main__":
    main()
