"""Staged pipeline with manifests.

Every stage reads artifacts from the output directory, writes its own, and
records a manifest (stage name, config hash, seed, input/output paths
relative to the output root). A stage whose manifest matches the current
config hash is skipped unless forced. Nothing here touches wall-clock time,
so identical config + seed runs produce byte-identical artifacts.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import augment as aug
from . import cae as cae_mod
from . import evaluation as ev
from . import gbdt as gbdt_mod
from .disasm import DEFAULT_SCHEME, disassemble, simplify
from .embeddings import CategoryEmbedder, read_embeddings_csv, write_embeddings_csv
from .ingest import Label, load_fixture_dir, merge_transactions, record_to_fixture
from .txfeatures import (
    FEATURE_NAMES,
    Standardizer,
    aggregate_hourly,
    remove_outlier_windows,
    windowize,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "MissingArtifactError",
    "DEFAULT_CONFIG",
    "STAGE_ORDER",
    "load_config",
    "validate_config",
    "config_hash",
    "Pipeline",
]


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


class MissingArtifactError(RuntimeError):
    def __init__(self, artifact: str, produced_by: str):
        super().__init__(
            f"missing prerequisite artifact {artifact!r} (run the {produced_by!r} stage first)"
        )
        self.artifact = artifact
        self.produced_by = produced_by


DEFAULT_CONFIG: dict = {
    "seed": None,
    "dataset": {"fixture_dir": None},
    "output_dir": None,
    "split": {"eval_fraction": 0.4},
    "embedding": {"dim": 50, "epochs": 100, "batch_size": 32, "lr": 0.001},
    "augmentation": {
        "methods": ["none", "smote", "adasyn", "gan"],
        "target": "balance",
        "k_neighbors": 5,
        "gan": {"noise_dim": 16, "hidden": 64, "epochs": 2000, "batch_size": 32, "lr": 0.0002},
    },
    "gbdt": {
        "hyperparams": {
            "learning_rate": 0.1,
            "max_depth": 5,
            "subsample": 0.5,
            "reg_alpha": 0.1,
            "reg_lambda": 0.01,
            "n_estimators": 300,
        },
        "grid": None,
        "cv_folds": 5,
    },
    "tx_features": {"window": 24, "stride": 1, "outlier_k": 3.0, "outlier_scope": "global"},
    "cae": {
        "epochs": 200,
        "batch_size": 32,
        "lr": 0.001,
        "bottleneck": 8,
        "embed_width": 8,
        "variants": ["transaction_only", "multimodal"],
    },
    "thresholds": {"sweep": [75, 80, 85, 90], "report": 90, "anomaly_ratio": 0.3},
}

_METHODS = ("none", "smote", "adasyn", "gan")


def load_config(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        raw = yaml.safe_load(text)
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return raw


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"{where}: unknown configuration key")
        if isinstance(base[key], dict) and base[key] and not key == "gbdt":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            out[key] = _merge(base[key], value, where)
        elif key == "gbdt":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            sub = copy.deepcopy(base[key])
            for k2, v2 in value.items():
                if k2 not in sub:
                    raise ConfigError(f"{where}.{k2}: unknown configuration key")
                if k2 == "hyperparams":
                    if not isinstance(v2, dict):
                        raise ConfigError(f"{where}.hyperparams: expected a mapping")
                    sub[k2] = {**sub[k2], **v2}
                else:
                    sub[k2] = v2
            out[key] = sub
        else:
            out[key] = value
    return out


def _require(cond: bool, field: str, message: str):
    if not cond:
        raise ConfigError(f"{field}: {message}")


def validate_config(raw: dict, check_paths: bool = True) -> dict:
    """Merge onto the defaults and validate; raises ConfigError naming the field."""
    cfg = _merge(DEFAULT_CONFIG, raw)

    _require(isinstance(cfg["seed"], int) and not isinstance(cfg["seed"], bool), "seed",
             "a seed is mandatory and must be an integer")
    _require(cfg["dataset"]["fixture_dir"] is not None, "dataset.fixture_dir",
             "a dataset location is required")
    if check_paths:
        _require(Path(cfg["dataset"]["fixture_dir"]).is_dir(), "dataset.fixture_dir",
                 f"no such directory: {cfg['dataset']['fixture_dir']}")
    frac = cfg["split"]["eval_fraction"]
    _require(isinstance(frac, (int, float)) and 0.0 < frac < 1.0, "split.eval_fraction",
             "must be a fraction strictly between 0 and 1")
    emb = cfg["embedding"]
    _require(int(emb["dim"]) >= 1, "embedding.dim", "must be >= 1")
    _require(int(emb["epochs"]) >= 1, "embedding.epochs", "must be >= 1")
    for m in cfg["augmentation"]["methods"]:
        _require(m in _METHODS, "augmentation.methods", f"unknown method {m!r}")
    target = cfg["augmentation"]["target"]
    _require(target == "balance" or (isinstance(target, int) and target > 0),
             "augmentation.target", "must be 'balance' or a positive integer")
    tf = cfg["tx_features"]
    _require(int(tf["window"]) >= 4 and int(tf["window"]) % 4 == 0, "tx_features.window",
             "must be a positive multiple of 4")
    _require(int(tf["stride"]) >= 1, "tx_features.stride", "must be >= 1")
    _require(tf["outlier_scope"] in ("global", "off"), "tx_features.outlier_scope",
             "must be 'global' or 'off'")
    for v in cfg["cae"]["variants"]:
        _require(v in cae_mod.VARIANTS, "cae.variants", f"unknown variant {v!r}")
    th = cfg["thresholds"]
    for p in list(th["sweep"]) + [th["report"]]:
        _require(75 <= float(p) <= 90, "thresholds", f"percentile {p} outside [75, 90]")
    _require(0.0 < float(th["anomaly_ratio"]) < 1.0, "thresholds.anomaly_ratio",
             "must be in (0, 1)")
    grid = cfg["gbdt"]["grid"]
    if grid is not None:
        _require(isinstance(grid, dict) and grid, "gbdt.grid",
                 "must be null or a non-empty mapping of parameter lists")
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of the validated config minus the output location."""
    stripped = {k: v for k, v in cfg.items() if k != "output_dir"}
    blob = json.dumps(stripped, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


STAGE_ORDER = (
    "ingest",
    "disasm",
    "embed",
    "augment",
    "train-gbdt",
    "tx-features",
    "train-cae",
    "score",
    "evaluate",
    "sweep",
)

_PRODUCERS = {
    "contracts.json": "ingest",
    "split.csv": "ingest",
    "categories.jsonl": "disasm",
    "embedder.model": "embed",
    "embeddings.csv": "embed",
    "hourly.csv": "tx-features",
    "standardizer.json": "tx-features",
    "windows.npz": "tx-features",
    "cae_train_errors.json": "train-cae",
    "embed_standardizer.json": "train-cae",
    "window_errors.jsonl": "score",
}


def _fmt(x: float) -> str:
    return repr(float(x))


class Pipeline:
    def __init__(self, config: dict, out_dir: str | Path | None = None, force: bool = False):
        self.config = config
        out = out_dir or config.get("output_dir")
        if not out:
            raise ConfigError("output_dir: an output directory is required (config or --out)")
        self.out = Path(out)
        self.force = force
        self.hash = config_hash(config)
        self.seed = config["seed"]

    # -- artifact helpers --------------------------------------------------

    def path(self, name: str) -> Path:
        return self.out / name

    def require(self, name: str, produced_by: str | None = None) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifactError(name, produced_by or _PRODUCERS.get(name, "earlier"))
        return p

    def _manifest_path(self, stage: str) -> Path:
        return self.out / "manifests" / f"{stage}.json"

    def _up_to_date(self, stage: str, outputs: list[str]) -> bool:
        if self.force:
            return False
        mp = self._manifest_path(stage)
        if not mp.exists():
            return False
        try:
            manifest = json.loads(mp.read_text())
        except json.JSONDecodeError:
            return False
        if manifest.get("config_hash") != self.hash:
            return False
        return all(self.path(o).exists() for o in outputs)

    def _write_manifest(self, stage: str, inputs: list[str], outputs: list[str], params) -> None:
        mp = self._manifest_path(stage)
        mp.parent.mkdir(parents=True, exist_ok=True)
        manifest = {
            "stage": stage,
            "config_hash": self.hash,
            "seed": self.seed,
            "params": params,
            "inputs": sorted(inputs),
            "outputs": sorted(outputs),
        }
        mp.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")

    # -- shared readers ----------------------------------------------------

    def _read_contracts(self) -> list[dict]:
        payload = json.loads(self.require("contracts.json").read_text())
        return payload["contracts"]

    def _read_split(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        with open(self.require("split.csv"), newline="") as fh:
            for row in csv.DictReader(fh):
                out[row["address"]] = {"label": row["label"], "role": row["role"]}
        return out

    def _read_embeddings(self):
        addresses, matrix, extra = read_embeddings_csv(self.require("embeddings.csv"))
        return addresses, matrix, extra

    # -- stages -------------------------------------------------------------

    def run(self, stage: str) -> None:
        name = stage.replace("_", "-")
        if name not in STAGE_ORDER:
            raise ConfigError(f"stage: unknown stage {stage!r}")
        method = getattr(self, "stage_" + name.replace("-", "_"))
        method()

    def run_all(self) -> None:
        for stage in STAGE_ORDER:
            self.run(stage)

    def stage_ingest(self) -> None:
        outputs = ["contracts.json", "split.csv"]
        if self._up_to_date("ingest", outputs):
            logger.info("ingest: up to date")
            return
        self.out.mkdir(parents=True, exist_ok=True)
        fixture_dir = self.config["dataset"]["fixture_dir"]
        records = load_fixture_dir(fixture_dir)
        if not records:
            raise ConfigError(f"dataset.fixture_dir: no contracts found in {fixture_dir}")

        contracts = []
        for rec in records:
            payload = record_to_fixture(rec)
            payload["label"] = rec.label.value
            contracts.append(payload)
        self.path("contracts.json").write_text(
            json.dumps({"contracts": contracts}, sort_keys=True) + "\n"
        )

        rng = np.random.default_rng(self.seed)
        frac = self.config["split"]["eval_fraction"]
        roles: dict[str, str] = {}
        for label in (Label.REPUTABLE, Label.ILLICIT):
            addrs = sorted(r.address for r in records if r.label is label)
            if not addrs:
                continue
            idx = rng.permutation(len(addrs))
            n_eval = int(round(frac * len(addrs)))
            n_eval = min(max(n_eval, 1), len(addrs) - 1) if len(addrs) > 1 else 0
            chosen = {addrs[i] for i in idx[:n_eval]}
            for a in addrs:
                roles[a] = "eval" if a in chosen else "train"
        with open(self.path("split.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["address", "label", "role"])
            for rec in records:
                writer.writerow(
                    [rec.address, rec.label.value, roles.get(rec.address, "score")]
                )
        self._write_manifest(
            "ingest", [str(fixture_dir)], outputs, self.config["split"]
        )

    def stage_disasm(self) -> None:
        outputs = ["categories.jsonl"]
        if self._up_to_date("disasm", outputs):
            logger.info("disasm: up to date")
            return
        contracts = self._read_contracts()
        with open(self.path("categories.jsonl"), "w") as fh:
            for c in contracts:
                seq = simplify(disassemble(c["bytecode"]), address=c["address"])
                fh.write(
                    json.dumps(
                        {"address": c["address"], "category_ids": list(seq.category_ids)},
                        sort_keys=True,
                    )
                    + "\n"
                )
        self._write_manifest("disasm", ["contracts.json"], outputs,
                             {"categories": list(DEFAULT_SCHEME.names)})

    def _read_categories(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        with open(self.require("categories.jsonl"), "r") as fh:
            for line in fh:
                row = json.loads(line)
                out[row["address"]] = row["category_ids"]
        return out

    def stage_embed(self) -> None:
        outputs = ["embedder.model", "embeddings.csv"]
        if self._up_to_date("embed", outputs):
            logger.info("embed: up to date")
            return
        cats = self._read_categories()
        split = self._read_split()
        emb_cfg = self.config["embedding"]

        train_addrs = [
            a for a in sorted(cats)
            if split[a]["role"] == "train" and split[a]["label"] != Label.UNLABELLED.value
        ]
        if not train_addrs:
            raise ConfigError("split.eval_fraction: no labelled training contracts left")
        y = [1 if split[a]["label"] == Label.ILLICIT.value else 0 for a in train_addrs]
        embedder = CategoryEmbedder(
            n_categories=DEFAULT_SCHEME.size,
            dim=int(emb_cfg["dim"]),
            epochs=int(emb_cfg["epochs"]),
            batch_size=int(emb_cfg["batch_size"]),
            lr=float(emb_cfg["lr"]),
            random_state=self.seed,
        ).fit([cats[a] for a in train_addrs], y)
        embedder.save(self.path("embedder.model"))

        addresses = sorted(cats)
        matrix = embedder.transform([cats[a] for a in addresses])
        write_embeddings_csv(
            self.path("embeddings.csv"),
            addresses,
            matrix,
            extra={
                "label": [split[a]["label"] for a in addresses],
                "role": [split[a]["role"] for a in addresses],
            },
        )
        self._write_manifest("embed", ["categories.jsonl", "split.csv"], outputs, emb_cfg)

    def _train_matrix(self, addresses, matrix, extra):
        role = np.array(extra["role"])
        label = np.array(extra["label"])
        train = role == "train"
        ill = label == Label.ILLICIT.value
        rep = label == Label.REPUTABLE.value
        X_min = matrix[train & ill]
        X_maj = matrix[train & rep]
        return X_min, X_maj

    def _synthetic_target(self, n_min: int, n_maj: int) -> int:
        target = self.config["augmentation"]["target"]
        if target == "balance":
            return n_maj
        return int(target)

    def stage_augment(self) -> None:
        cfg = self.config["augmentation"]
        methods = [m for m in cfg["methods"] if m != "none"]
        outputs = [f"synthetic_{m}.csv" for m in methods] + [f"quality_{m}.json" for m in methods]
        if self._up_to_date("augment", outputs):
            logger.info("augment: up to date")
            return
        addresses, matrix, extra = self._read_embeddings()
        X_min, X_maj = self._train_matrix(addresses, matrix, extra)
        if X_min.shape[0] == 0:
            raise ConfigError("augmentation: no illicit training contracts to augment")
        target = self._synthetic_target(X_min.shape[0], X_maj.shape[0])
        n_new = max(target - X_min.shape[0], 0)

        for m in methods:
            rng = np.random.default_rng(self.seed)
            if m == "smote":
                synth = aug.smote(X_min, n_new, k_neighbors=int(cfg["k_neighbors"]), rng=rng)
            elif m == "adasyn":
                synth = aug.adasyn(
                    X_min, X_maj, n_new, k_neighbors=int(cfg["k_neighbors"]), rng=rng
                )
            else:
                gan = aug.GanAugmenter(random_state=self.seed, **cfg["gan"]).fit(X_min)
                synth = gan.sample(n_new, seed=self.seed)
            ids = [f"synthetic-{m}-{i:04d}" for i in range(synth.shape[0])]
            write_embeddings_csv(
                self.path(f"synthetic_{m}.csv"),
                ids,
                synth,
                extra={"provenance": [m] * synth.shape[0]},
            )
            report = aug.quality_metrics(X_min, synth) if synth.shape[0] else None
            payload = report.as_dict() if report else {"note": "no synthetic rows required"}
            payload["method"] = m
            self.path(f"quality_{m}.json").write_text(
                json.dumps(payload, sort_keys=True, indent=1) + "\n"
            )
        self._write_manifest(
            "augment", ["embeddings.csv", "split.csv"], outputs,
            {k: v for k, v in cfg.items()},
        )

    def stage_train_gbdt(self) -> None:
        cfg = self.config["gbdt"]
        methods = list(self.config["augmentation"]["methods"])
        outputs = [f"gbdt_{m}.json" for m in methods]
        if cfg["grid"] is not None:
            outputs += [f"grid_{m}.json" for m in methods]
        if self._up_to_date("train-gbdt", outputs):
            logger.info("train-gbdt: up to date")
            return
        addresses, matrix, extra = self._read_embeddings()
        role = np.array(extra["role"])
        label = np.array(extra["label"])
        train = (role == "train") & (label != Label.UNLABELLED.value)
        X_real = matrix[train]
        y_real = (label[train] == Label.ILLICIT.value).astype(np.int64)
        aug_cfg = self.config["augmentation"]

        for m in methods:
            if m == "none":
                X_tr, y_tr = X_real, y_real
            else:
                ids, synth, _ = read_embeddings_csv(self.require(f"synthetic_{m}.csv", "augment"))
                X_tr = np.vstack([X_real, synth]) if synth.size else X_real
                y_tr = np.concatenate([y_real, np.ones(synth.shape[0], dtype=np.int64)])

            params = {**cfg["hyperparams"], "random_state": self.seed}
            if cfg["grid"] is not None:

                def callback(X_f, y_f, fold, method=m):
                    if method == "none":
                        return X_f, y_f
                    y_f = np.asarray(y_f)
                    policy = aug_cfg["target"]
                    target = None  # balance within the fold
                    if policy != "balance":
                        target = max(int(policy), int((y_f == 1).sum()))
                    out = aug.augment_dataset(
                        X_f,
                        y_f,
                        method,
                        target_count=target,
                        k_neighbors=int(aug_cfg["k_neighbors"]),
                        gan_params=aug_cfg["gan"],
                        seed=self.seed + fold,
                    )
                    return out[0], out[1]

                result = gbdt_mod.grid_search_cv(
                    X_real,
                    y_real,
                    param_grid=cfg["grid"],
                    n_splits=int(cfg["cv_folds"]),
                    base_params=cfg["hyperparams"],
                    augment=callback,
                    random_state=self.seed,
                )
                params = {**params, **result.best_params}
                self.path(f"grid_{m}.json").write_text(
                    json.dumps(
                        {
                            "best_params": result.best_params,
                            "results": result.results,
                            "fold_assignments": result.fold_assignments.tolist(),
                        },
                        sort_keys=True,
                        indent=1,
                    )
                    + "\n"
                )
            est = gbdt_mod.GradientBoostedClassifier(**params).fit(X_tr, y_tr)
            est.to_json(self.path(f"gbdt_{m}.json"))
        self._write_manifest(
            "train-gbdt",
            ["embeddings.csv", "split.csv"] + [f"synthetic_{m}.csv" for m in methods if m != "none"],
            outputs,
            cfg,
        )

    def stage_tx_features(self) -> None:
        outputs = ["hourly.csv", "standardizer.json", "windows.npz"]
        if self._up_to_date("tx-features", outputs):
            logger.info("tx-features: up to date")
            return
        from .ingest import ContractRecord, _parse_tx  # local import to reuse parsing

        contracts = self._read_contracts()
        split = self._read_split()
        tf = self.config["tx_features"]
        window, stride = int(tf["window"]), int(tf["stride"])

        hourly: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        with open(self.path("hourly.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["address", "hour_start", *FEATURE_NAMES])
            for c in contracts:
                rec = ContractRecord(
                    address=c["address"],
                    bytecode=c["bytecode"],
                    transactions=[_parse_tx(t, internal=False) for t in c["txlist"]],
                    internal_transactions=[
                        _parse_tx(t, internal=True) for t in c["txlistinternal"]
                    ],
                )
                hours, feats = aggregate_hourly(merge_transactions(rec))
                hourly[c["address"]] = (hours, feats)
                for i in range(feats.shape[0]):
                    writer.writerow(
                        [c["address"], int(hours[i]), *[_fmt(v) for v in feats[i]]]
                    )

        train_rep = [
            a for a in sorted(hourly)
            if split[a]["role"] == "train" and split[a]["label"] == Label.REPUTABLE.value
        ]
        if not train_rep:
            raise ConfigError("split.eval_fraction: no reputable training contracts left")
        eval_addrs = [
            a for a in sorted(hourly)
            if a not in train_rep and hourly[a][1].shape[0] > 0
        ]

        kept: dict[str, np.ndarray] = {}
        pooled = np.vstack([hourly[a][1] for a in train_rep])
        if tf["outlier_scope"] == "global":
            _, mask = remove_outlier_windows(pooled, k=float(tf["outlier_k"]))
            offset = 0
            for a in train_rep:
                n = hourly[a][1].shape[0]
                kept[a] = hourly[a][1][mask[offset : offset + n]]
                offset += n
            pooled = pooled[mask]
        else:
            for a in train_rep:
                kept[a] = hourly[a][1]

        standardizer = Standardizer().fit(pooled, feature_names=FEATURE_NAMES)
        standardizer.to_json(self.path("standardizer.json"))

        def collect(addrs, source):
            windows_list, owners, starts_list = [], [], []
            for a in addrs:
                feats = source(a)
                if feats.shape[0] == 0:
                    logger.warning("%s: no hourly rows, skipped", a)
                    continue
                w, s = windowize(standardizer.transform(feats), window=window, stride=stride)
                windows_list.append(w)
                owners.extend([a] * w.shape[0])
                starts_list.append(s)
            if not windows_list:
                return (
                    np.zeros((0, window, len(FEATURE_NAMES))),
                    np.array([], dtype="U64"),
                    np.array([], dtype=np.int64),
                )
            return (
                np.vstack(windows_list),
                np.array(owners, dtype="U64"),
                np.concatenate(starts_list),
            )

        train_w, train_a, train_s = collect(train_rep, lambda a: kept[a])
        eval_w, eval_a, eval_s = collect(eval_addrs, lambda a: hourly[a][1])
        np.savez(
            self.path("windows.npz"),
            train_windows=train_w,
            train_addresses=train_a,
            train_starts=train_s,
            eval_windows=eval_w,
            eval_addresses=eval_a,
            eval_starts=eval_s,
        )
        self._write_manifest("tx-features", ["contracts.json", "split.csv"], outputs, tf)

    def _load_windows(self):
        data = np.load(self.require("windows.npz"), allow_pickle=False)
        return (
            data["train_windows"],
            data["train_addresses"],
            data["eval_windows"],
            data["eval_addresses"],
        )

    def _embedding_lookup(self) -> dict[str, np.ndarray]:
        addresses, matrix, _ = self._read_embeddings()
        return {a: matrix[i] for i, a in enumerate(addresses)}

    def stage_train_cae(self) -> None:
        cfg = self.config["cae"]
        variants = list(cfg["variants"])
        outputs = [f"cae_{v}.model" for v in variants] + ["cae_train_errors.json"]
        if "multimodal" in variants:
            outputs.append("embed_standardizer.json")
        if self._up_to_date("train-cae", outputs):
            logger.info("train-cae: up to date")
            return
        train_w, train_a, _, _ = self._load_windows()
        if train_w.shape[0] == 0:
            raise ConfigError("tx_features: no training windows available")
        tf = self.config["tx_features"]

        emb_std = None
        train_emb = None
        if "multimodal" in variants:
            lookup = self._embedding_lookup()
            split = self._read_split()
            train_rep = sorted(
                a for a, info in split.items()
                if info["role"] == "train" and info["label"] == Label.REPUTABLE.value
            )
            emb_std = Standardizer().fit(np.stack([lookup[a] for a in train_rep]))
            emb_std.to_json(self.path("embed_standardizer.json"))
            train_emb = emb_std.transform(np.stack([lookup[a] for a in train_a]))

        train_errors: dict[str, list[float]] = {}
        for variant in variants:
            multimodal = variant == "multimodal"
            model = cae_mod.ConvAutoencoder(
                window=int(tf["window"]),
                n_features=len(FEATURE_NAMES),
                bottleneck=int(cfg["bottleneck"]),
                epochs=int(cfg["epochs"]),
                batch_size=int(cfg["batch_size"]),
                lr=float(cfg["lr"]),
                multimodal=multimodal,
                embed_dim=int(self.config["embedding"]["dim"]),
                embed_width=int(cfg["embed_width"]),
                random_state=self.seed,
            )
            model.fit(train_w, embeddings=train_emb if multimodal else None)
            model.save(self.path(f"cae_{variant}.model"))
            errors = model.reconstruction_errors(
                train_w, train_emb if multimodal else None
            )
            train_errors[variant] = [float(e) for e in errors]
        self.path("cae_train_errors.json").write_text(
            json.dumps(train_errors, sort_keys=True) + "\n"
        )
        self._write_manifest(
            "train-cae",
            ["windows.npz"] + (["embeddings.csv"] if "multimodal" in variants else []),
            outputs,
            cfg,
        )

    def stage_score(self) -> None:
        variants = list(self.config["cae"]["variants"])
        outputs = ["window_errors.jsonl"] + [f"latents_{v}.csv" for v in variants]
        if self._up_to_date("score", outputs):
            logger.info("score: up to date")
            return
        _, _, eval_w, eval_a = self._load_windows()
        split = self._read_split()
        if eval_w.shape[0] == 0:
            raise ConfigError("tx_features: no evaluation windows available")

        emb_per_window = None
        if "multimodal" in variants:
            emb_std = Standardizer.from_json(self.require("embed_standardizer.json", "train-cae"))
            lookup = self._embedding_lookup()
            emb_per_window = emb_std.transform(np.stack([lookup[a] for a in eval_a]))

        rows = []
        for variant in variants:
            model = cae_mod.ConvAutoencoder.load(self.require(f"cae_{variant}.model", "train-cae"))
            emb = emb_per_window if model.multimodal else None
            errors = model.reconstruction_errors(eval_w, emb)
            latents = model.transform(eval_w, emb)
            proj, _ = cae_mod.pca_project(latents)
            with open(self.path(f"latents_{variant}.csv"), "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["address", "window_index", "pc1", "pc2"])
                for i, a in enumerate(eval_a):
                    writer.writerow([str(a), i, _fmt(proj[i, 0]), _fmt(proj[i, 1])])
            for address in sorted(set(str(a) for a in eval_a)):
                sel = np.array([str(a) == address for a in eval_a])
                rows.append(
                    {
                        "address": address,
                        "errors": [float(e) for e in errors[sel]],
                        "label": split[address]["label"],
                        "role": split[address]["role"],
                        "variant": variant,
                    }
                )
        rows.sort(key=lambda r: (r["variant"], r["address"]))
        with open(self.path("window_errors.jsonl"), "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        self._write_manifest(
            "score",
            ["windows.npz"] + [f"cae_{v}.model" for v in variants],
            outputs,
            {"variants": variants},
        )

    def _variant_scores(self) -> list[ev.VariantScores]:
        train_errors = json.loads(self.require("cae_train_errors.json").read_text())
        by_variant: dict[str, ev.VariantScores] = {
            v: ev.VariantScores(variant=v, train_errors=np.asarray(errs, dtype=np.float64))
            for v, errs in sorted(train_errors.items())
        }
        with open(self.require("window_errors.jsonl"), "r") as fh:
            for line in fh:
                row = json.loads(line)
                v = row["variant"]
                if v in by_variant:
                    by_variant[v].contracts.append(
                        ev.ContractScores(
                            address=row["address"],
                            label=row["label"],
                            errors=np.asarray(row["errors"], dtype=np.float64),
                        )
                    )
        return [by_variant[v] for v in sorted(by_variant)]

    def stage_evaluate(self) -> None:
        methods = list(self.config["augmentation"]["methods"])
        outputs = ["gbdt_metrics.csv", "cae_metrics.csv", "anomaly_reports.jsonl"]
        if self._up_to_date("evaluate", outputs):
            logger.info("evaluate: up to date")
            return
        addresses, matrix, extra = self._read_embeddings()
        role = np.array(extra["role"])
        label = np.array(extra["label"])
        eva = (role == "eval") & (label != Label.UNLABELLED.value)
        X_eval = matrix[eva]
        y_eval = (label[eva] == Label.ILLICIT.value).astype(np.int64)

        with open(self.path("gbdt_metrics.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                [
                    "method", "n_eval", "accuracy", "precision_illicit", "recall_illicit",
                    "f1_illicit", "log_loss", "degenerate_metrics",
                ]
            )
            for m in methods:
                est = gbdt_mod.GradientBoostedClassifier.from_json(
                    self.require(f"gbdt_{m}.json", "train-gbdt")
                )
                p = est.predict_proba(X_eval)
                metrics = ev.compute_metrics(y_eval, (p > 0.5).astype(np.int64), y_prob=p)
                writer.writerow(
                    [
                        m, int(eva.sum()), _fmt(metrics.accuracy),
                        _fmt(metrics.precision_illicit), _fmt(metrics.recall_illicit),
                        _fmt(metrics.f1_illicit), _fmt(metrics.log_loss),
                        ";".join(metrics.degenerate_metrics),
                    ]
                )

        th = self.config["thresholds"]
        scores = self._variant_scores()
        reports = []
        cae_rows = []
        for vs in scores:
            threshold = cae_mod.fit_threshold(vs.train_errors, float(th["report"]), vs.variant)
            verdicts, labels = [], []
            for contract in vs.contracts:
                report = cae_mod.classify_contract(
                    contract.address,
                    contract.errors,
                    threshold,
                    ratio_cutoff=float(th["anomaly_ratio"]),
                    variant=vs.variant,
                )
                reports.append(report)
                verdicts.append(1 if report.verdict == Label.ILLICIT.value else 0)
                labels.append(1 if contract.label == Label.ILLICIT.value else 0)
            metrics = ev.compute_metrics(labels, verdicts)
            cae_rows.append((vs.variant, float(th["report"]), metrics))

        with open(self.path("anomaly_reports.jsonl"), "w") as fh:
            for report in sorted(reports, key=lambda r: (r.variant, r.address)):
                fh.write(json.dumps(report.as_dict(), sort_keys=True) + "\n")
        with open(self.path("cae_metrics.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["variant", "percentile", "accuracy", "recall_illicit", "f1_illicit",
                 "f1_reputable", "degenerate_metrics"]
            )
            for variant, pct, m in cae_rows:
                writer.writerow(
                    [variant, _fmt(pct), _fmt(m.accuracy), _fmt(m.recall_illicit),
                     _fmt(m.f1_illicit), _fmt(m.f1_reputable),
                     ";".join(m.degenerate_metrics)]
                )
        self._write_manifest(
            "evaluate",
            ["embeddings.csv", "window_errors.jsonl", "cae_train_errors.json"]
            + [f"gbdt_{m}.json" for m in methods],
            outputs,
            {"thresholds": th, "methods": methods},
        )

    def stage_sweep(self) -> None:
        outputs = ["sweep.csv", "sweep.md"]
        if self._up_to_date("sweep", outputs):
            logger.info("sweep: up to date")
            return
        th = self.config["thresholds"]
        rows = ev.threshold_sweep(
            self._variant_scores(),
            percentiles=[float(p) for p in th["sweep"]],
            ratio_cutoff=float(th["anomaly_ratio"]),
        )
        ev.write_sweep_csv(rows, self.path("sweep.csv"))
        self.path("sweep.md").write_text(ev.sweep_to_markdown(rows))
        self._write_manifest(
            "sweep", ["window_errors.jsonl", "cae_train_errors.json"], outputs, th
        )
