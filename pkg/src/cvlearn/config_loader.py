from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional

import yaml


EXPERIMENTS = ("itv", "counterexample", "bound-multiclass", "bound-structured", "complexity")


# -----------------------------
# Specs
# -----------------------------

@dataclass(frozen=True)
class ComponentConfig:
    """
    learner など module + class + params の構造を持つ要素に使う
    """
    module: str
    class_name: str
    params: Dict[str, Any]


@dataclass(frozen=True)
class ExperimentConfig:
    # --- top-level ---
    experiment: str
    seed: int
    output_dir: Path

    # --- sample / statistics ---
    m: int = 200
    trials: int = 2000
    rho: float = 1.0
    delta: float = 0.05
    n_draws: int = 200
    n_instances: int = 100

    # --- hypothesis class ---
    p: float = 2.0
    K: int = 3
    d: int = 5

    # --- structured ---
    l: int = 3
    alphabet_size: int = 2

    # --- finite distributions ---
    support_size: int = 8
    noise: float = 0.0

    # --- search / enumeration ---
    candidates: int = 4096
    enumeration_cap: int = 4096
    size_cap: int = 10**6          # ライブラリ経由の列挙 (損失拡張 max) の上限

    # --- verifier ---
    strategy: str = "constrained_argmax"
    apply_cv: bool = True

    # --- assets (config の場所基準) ---
    requirement_path: Optional[Path] = None

    learner: Optional[ComponentConfig] = None
    source_path: Optional[Path] = field(default=None, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        for key in ("output_dir", "requirement_path", "source_path"):
            if d[key] is not None:
                d[key] = str(d[key])
        if self.learner is not None:
            d["learner"] = {"module": self.learner.module, "class": self.learner.class_name, "params": self.learner.params}
        # source_path は実行環境依存なので結果には残さない
        d.pop("source_path")
        return d

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        if "output_dir" in clean:
            clean["output_dir"] = Path(clean["output_dir"])
        return replace(self, **clean)


# -----------------------------
# Internal helpers
# -----------------------------

def _require(cfg: dict, key: str, *, where: str) -> Any:
    if key not in cfg:
        raise KeyError(f"Missing key '{key}' in {where}")
    return cfg[key]


def _positive(v: Any, *, key: str, where: str, cast: type = int) -> Any:
    x = cast(v)
    if x <= 0:
        raise ValueError(f"{key} must be positive, got {v!r} in {where}")
    return x


def _resolve(base_dir: Path, raw: Any) -> Optional[Path]:
    if raw is None:
        return None
    p = Path(str(raw))
    if not p.is_absolute():
        p = (base_dir / p).resolve()
    return p


def _load_component_config(cfg: dict, *, where: str) -> ComponentConfig:
    module = str(_require(cfg, "module", where=where))
    class_name = str(_require(cfg, "class", where=where))
    params = cfg.get("params", {}) or {}
    if not isinstance(params, dict):
        raise TypeError(f"{where}.params must be a mapping, got {type(params)}")
    return ComponentConfig(module=module, class_name=class_name, params=dict(params))


# -----------------------------
# Public API
# -----------------------------

def experiment_config_from_dict(cfg: Dict[str, Any], *, base_dir: Path, where: str) -> ExperimentConfig:
    if not isinstance(cfg, dict):
        raise TypeError(f"experiment config must be a mapping in {where}")

    experiment = str(_require(cfg, "experiment", where=where))
    if experiment not in EXPERIMENTS:
        raise ValueError(f"Unknown experiment {experiment!r} in {where} (expected one of {list(EXPERIMENTS)})")

    # output_dir は相対なら config の場所基準にする
    output_dir = _resolve(base_dir, cfg.get("output_dir", f"results/{experiment}"))

    kw: Dict[str, Any] = {}
    for key in ("m", "trials", "n_draws", "n_instances", "K", "d", "l", "alphabet_size",
                "support_size", "candidates", "enumeration_cap", "size_cap"):
        if key in cfg:
            kw[key] = _positive(cfg[key], key=key, where=where)
    for key in ("rho", "p"):
        if key in cfg:
            kw[key] = _positive(cfg[key], key=key, where=where, cast=float)
    if "delta" in cfg:
        delta = float(cfg["delta"])
        if not 0.0 < delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {delta!r} in {where}")
        kw["delta"] = delta
    if "noise" in cfg:
        noise = float(cfg["noise"])
        if not 0.0 <= noise <= 1.0:
            raise ValueError(f"noise must lie in [0, 1], got {noise!r} in {where}")
        kw["noise"] = noise
    if "p" in kw and not 1.0 <= kw["p"] <= 2.0:
        raise ValueError(f"p must lie in [1, 2], got {kw['p']!r} in {where}")
    if "strategy" in cfg:
        kw["strategy"] = str(cfg["strategy"])
    if "apply_cv" in cfg:
        kw["apply_cv"] = bool(cfg["apply_cv"])

    # --- asset paths (relative to config) ---
    kw["requirement_path"] = _resolve(base_dir, cfg.get("requirement"))

    if cfg.get("learner") is not None:
        kw["learner"] = _load_component_config(cfg["learner"], where=f"{where}:learner")

    return ExperimentConfig(
        experiment=experiment,
        seed=int(cfg.get("seed", 0)),
        output_dir=output_dir,
        **kw,
    )


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """
    YAML (JSON も可) の実験設定を読む.

    Expected keys:
      - experiment, seed, output_dir
      - m, trials, rho, delta, n_draws, n_instances, p, K, d, l, alphabet_size, ...
      - requirement: "rules/....json"   (config の場所基準)
      - learner: { module, class, params }
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        cfg = yaml.safe_load(f) or {}
    out = experiment_config_from_dict(cfg, base_dir=path.parent, where=str(path))
    return replace(out, source_path=path.resolve())


def default_config(experiment: str, output_dir: str | Path = "results", seed: int = 0) -> ExperimentConfig:
    """--config 無しで CLI を呼んだときの既定値."""
    return experiment_config_from_dict(
        {"experiment": experiment, "seed": seed, "output_dir": str(output_dir)},
        base_dir=Path.cwd(),
        where="<defaults>",
    )
