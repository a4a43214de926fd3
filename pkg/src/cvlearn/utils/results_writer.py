from __future__ import annotations

import csv
from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from cvlearn import __version__

logger = logging.getLogger(__name__)


def _plain(x: Any) -> Any:
    """numpy の値を JSON / CSV に書ける Python の値へ."""
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"Object of type {type(x).__name__} is not JSON serializable")


def dumps(x: Any) -> str:
    return json.dumps(x, ensure_ascii=False, indent=2, default=_plain) + "\n"


@dataclass
class ResultsWriter:
    """
    1 実験分の成果物を out_dir に書く.
    - <table>.csv   : 1 行 / draw (または instance)
    - results.json  : レポート全体
    - config.json   : 実効設定のエコー
    - manifest.json : 実験名, seed, バージョン, ファイル一覧 (時刻は入れない)
    """
    out_dir: Path
    experiment: str
    seed: int

    _files: List[str] = field(default_factory=list)
    _f: Optional[Any] = None
    _writer: Optional[csv.DictWriter] = None

    def open(self, name: str, columns: Sequence[str]) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.close()
        path = self.out_dir / name
        self._f = path.open("w", newline="", encoding="utf-8")
        self._writer = csv.DictWriter(self._f, fieldnames=list(columns), lineterminator="\n")
        self._writer.writeheader()
        self._files.append(name)

    def close(self) -> None:
        if self._f is not None:
            self._f.flush()
            self._f.close()
        self._f = None
        self._writer = None

    def write_row(self, row: Dict[str, Any]) -> None:
        if self._writer is None:
            raise RuntimeError("ResultsWriter is not opened. Call open() first.")
        self._writer.writerow({k: _csv_value(v) for k, v in row.items()})

    def write_json(self, name: str, doc: Any) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        path.write_text(dumps(doc), encoding="utf-8")
        self._files.append(name)
        return path

    def write_manifest(self, ok: bool) -> Path:
        manifest = {
            "experiment": self.experiment,
            "seed": self.seed,
            "version": __version__,
            "ok": bool(ok),
            "files": sorted(set(self._files)),
        }
        path = self.out_dir / "manifest.json"
        path.write_text(dumps(manifest), encoding="utf-8")
        return path

    @property
    def files(self) -> List[Path]:
        return [self.out_dir / f for f in sorted(set(self._files))]


def _csv_value(v: Any) -> Any:
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float):
        return repr(v)
    return v


def emit_results(report: Any, cfg: Any, out_dir: Optional[Path] = None) -> List[Path]:
    """
    report.tables() の各表を CSV に, report.to_dict() を results.json に書く.
    同じ cfg なら何度書いてもバイト単位で同じ内容になる.
    """
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir)
    writer = ResultsWriter(out, cfg.experiment, int(cfg.seed))
    try:
        for name, (columns, rows) in report.tables().items():
            writer.open(name, columns)
            for row in rows:
                writer.write_row(row)
        writer.close()
        writer.write_json("results.json", report.to_dict())
        writer.write_json("config.json", cfg.to_dict())
        writer.write_manifest(bool(getattr(report, "ok", True)))
    finally:
        writer.close()
    logger.info("wrote %d files to %s", len(writer.files) + 1, out)
    return writer.files + [out / "manifest.json"]


def read_results(path: str | Path) -> Dict[str, Any]:
    """results.json を読み戻す."""
    with Path(path).open("r", encoding="utf-8") as f:
        return json.load(f)
