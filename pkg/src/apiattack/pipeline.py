"""Fixture generation and replayable attack runs driven by an INI manifest."""

from __future__ import annotations

import configparser
import io
import logging
import secrets
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import attacks, featurizer as fz, gan as gan_mod, metrics, nn_core
from .client import LocalOracle, OracleClient
from .errors import ApiAttackError, ArtifactIOError, RateLimited, ValidationError
from .fixtures import generate_text_corpus
from .oracle import QueryBudget, TargetClassifier

log = logging.getLogger(__name__)

BUNDLED_CORPORA = {1: "corpus-subjective.txt", 2: "corpus-objective.txt"}


def random_seed() -> int:
    return secrets.randbelow(2**31)


def write_ini(parser: configparser.ConfigParser, path: Path) -> None:
    buf = io.StringIO()
    parser.write(buf)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create {path}: {exc.strerror or exc}") from exc
    return path


# fixtures -------------------------------------------------------------------------

def bundled_corpus(label: int) -> list[str]:
    text = resources.files("apiattack.data").joinpath(BUNDLED_CORPORA[label]).read_text("utf-8")
    return [line for line in text.splitlines() if line.strip()]


@dataclass(frozen=True)
class FixtureSplit:
    target_train: int = 2000
    test: int = 500
    candidates: int = 1000
    # whatever is left becomes the adversary's query pool


def make_fixtures(output_dir: str | Path, k: int = 50, seed: int = 0,
                  corpora: dict[int, list[str]] | None = None, synthetic_docs: int | None = None,
                  split: FixtureSplit = FixtureSplit(), top_n: int = 20) -> dict[str, Path]:
    """Clean, vocabularize and featurize a two-class corpus into the dataset files
    every later stage reads. Labels stored in the files are the corpus (ground-truth)
    classes; the adversary only ever sees oracle labels."""
    out = _mkdir(Path(output_dir))
    if synthetic_docs:
        docs = generate_text_corpus(synthetic_docs, seed=seed)
    else:
        corpora = corpora or {c: bundled_corpus(c) for c in (1, 2)}
        docs = [(t, c) for c in (1, 2) for t in corpora[c]]
    if not docs:
        raise ValidationError("no input documents")
    order = np.random.default_rng(seed).permutation(len(docs))
    docs = [docs[i] for i in order]
    tokens = [fz.clean_text(t) for t, _ in docs]
    labels = np.array([c for _, c in docs], dtype=np.int64)
    vocab = fz.build_vocab(tokens, k)
    data = fz.Dataset(fz.featurize_corpus(tokens, vocab), labels, vocabulary=vocab)

    need = split.target_train + split.test + split.candidates
    if len(data) <= need:
        raise ValidationError(f"{len(data)} documents cannot fill splits needing more than {need}")
    a = split.target_train
    b = a + split.test
    c = b + split.candidates
    parts = {"target_train": range(0, a), "test": range(a, b),
             "candidates": range(b, c), "pool": range(c, len(data))}
    paths = {}
    for name, rows in parts.items():
        paths[name] = out / f"{name}.jsonl"
        data.subset(list(rows)).save(paths[name])
    paths["vocab"] = out / "vocab.txt"
    vocab.save(paths["vocab"])
    paths["corpus"] = out / "corpus_clean.txt"
    paths["corpus"].write_text("".join(f"{y}\t{' '.join(t)}\n" for t, y in zip(tokens, labels)),
                               encoding="utf-8")
    paths["word_freq"] = out / "word_freq.csv"
    paths["word_freq"].write_text(
        fz.render_frequency_report(fz.token_frequency_report(tokens, top_n)), encoding="utf-8")
    return paths


# attack runs -------------------------------------------------------------------------

DEFAULT_MANIFEST = {
    "run": {"seed": "", "output_dir": "run"},
    "inputs": {"target": "target.model", "target_train": "target_train.jsonl",
               "pool": "pool.jsonl", "test": "test.jsonl", "candidates": "candidates.jsonl",
               "endpoint": ""},
    "oracle": {"limit": "1000", "window": "86400", "eval_limit": "1000"},
    "exfiltration": {"budget": "100", "label_only": "true"},
    "substitute": {"hidden_layers": "3", "neurons_per_layer": "50", "weight_scale": "1",
                   "minibatch": "25", "momentum": "0.9", "learning_rate": "0.003",
                   "epochs": "20", "optimizer": "adam", "grid": ""},
    "gan": {"noise_dim": "20", "generator_hidden": "64,128", "discriminator_hidden": "128,128",
            "epochs": "5000", "batch_size": "32", "d_steps_per_g_step": "2",
            "learning_rate": "0.0002", "adam_beta1": "0.5"},
    "sweep": {"sizes": "0,50,100,150,200,300"},
    "causative": {"enabled": "true", "p": "10", "count": "1000", "substitute_ns": "best"},
    "evasion": {"enabled": "true", "n": "50", "mode": "max_error"},
}


class StageError(ApiAttackError):
    """A pipeline stage failed; carries the stage name and the original error class."""

    def __init__(self, stage: str, cause: ApiAttackError):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = cause.exit_code
        self.kind = cause.kind


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(" ", "").split(",") if v]


def load_manifest(path: str | Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    parser.read_dict(DEFAULT_MANIFEST)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ArtifactIOError(f"cannot read manifest {path}: {exc.strerror or exc}") from exc
    except configparser.Error as exc:
        raise ValidationError(f"malformed manifest {path}: {exc}") from exc
    return parser


def parse_grid(text: str, base: attacks.GridPoint) -> list[attacks.GridPoint]:
    """``LxN[/scale/minibatch/momentum]`` entries, comma separated, e.g. ``2x30,3x50/3/25/0.1``."""
    points = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        head, *rest = item.split("/")
        layers, neurons = (int(v) for v in head.lower().split("x"))
        scale = float(rest[0]) if len(rest) > 0 else base.weight_scale
        mb = int(rest[1]) if len(rest) > 1 else base.minibatch
        mom = float(rest[2]) if len(rest) > 2 else base.momentum
        points.append(attacks.GridPoint(layers, neurons, scale, mb, mom))
    return points


@dataclass
class RunSettings:
    seed: int
    base_dir: Path
    output_dir: Path
    manifest: configparser.ConfigParser

    def path(self, key: str) -> Path:
        p = Path(self.manifest["inputs"][key])
        return p if p.is_absolute() else self.base_dir / p


def _substitute_settings(m: configparser.ConfigParser, seed: int):
    s = m["substitute"]
    point = attacks.GridPoint(s.getint("hidden_layers"), s.getint("neurons_per_layer"),
                              s.getfloat("weight_scale"), s.getint("minibatch"),
                              s.getfloat("momentum"))
    base = nn_core.TrainConfig(epochs=s.getint("epochs"), learning_rate=s.getfloat("learning_rate"),
                               optimizer=s.get("optimizer"), seed=seed)
    return point, base, parse_grid(s.get("grid", ""), point)


def _gan_config(m: configparser.ConfigParser, seed: int) -> gan_mod.GanConfig:
    g = m["gan"]
    return gan_mod.GanConfig(noise_dim=g.getint("noise_dim"),
                             generator_hidden=tuple(_ints(g["generator_hidden"])),
                             discriminator_hidden=tuple(_ints(g["discriminator_hidden"])),
                             epochs=g.getint("epochs"), batch_size=g.getint("batch_size"),
                             d_steps_per_g_step=g.getint("d_steps_per_g_step"),
                             learning_rate=g.getfloat("learning_rate"),
                             adam_beta1=g.getfloat("adam_beta1"), seed=seed)


class _Stage:
    def __init__(self, name: str, status: dict):
        self.name, self.status = name, status

    def __enter__(self):
        log.info("stage %s", self.name)
        self.status["stage"] = self.name

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, ApiAttackError) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def run_attack(manifest_path: str | Path, seed: int | None = None,
               output_dir: str | Path | None = None, endpoint: str | None = None) -> dict:
    """Execute the manifest's stages and write every artifact plus a completed manifest.

    Returns a summary dict. Stage failures raise :class:`StageError` after
    writing ``status.txt``; artifacts of finished stages stay on disk.
    """
    manifest_path = Path(manifest_path)
    m = load_manifest(manifest_path)
    base = manifest_path.parent
    if seed is None:
        seed = m["run"].getint("seed") if m["run"]["seed"].strip() else random_seed()
    m["run"]["seed"] = str(seed)
    if output_dir is not None:
        m["run"]["output_dir"] = str(output_dir)
    if endpoint is not None:
        m["inputs"]["endpoint"] = endpoint
    out = Path(m["run"]["output_dir"])
    out = out if out.is_absolute() else base / out
    _mkdir(out)
    status: dict = {"stage": "setup"}
    summary: dict = {"seed": seed, "output_dir": str(out)}
    try:
        _run_stages(RunSettings(seed, base, out, m), status, summary)
    except StageError as exc:
        (out / "status.txt").write_text(
            f"status=failed\nstage={exc.stage}\nkind={exc.kind}\nmessage={exc.cause}\n",
            encoding="utf-8")
        raise
    (out / "status.txt").write_text("status=ok\n", encoding="utf-8")
    m["run"]["tool_version"] = __version__
    m["outputs"] = {k: v for k, v in sorted(summary.get("outputs", {}).items())}
    write_ini(m, out / "manifest.ini")
    return summary


def _run_stages(rs: RunSettings, status: dict, summary: dict) -> None:
    m, out, seed = rs.manifest, rs.output_dir, rs.seed
    outputs: dict[str, str] = {}
    summary["outputs"] = outputs

    with _Stage("load", status):
        target = TargetClassifier.load(rs.path("target"))
        pool = fz.Dataset.load(rs.path("pool"))
        test = fz.Dataset.load(rs.path("test"))
        ep = m["inputs"]["endpoint"].strip()
        oracle_cfg = m["oracle"]
        if ep:
            client = OracleClient(ep)
            eval_client = client
        else:
            client = LocalOracle(target, QueryBudget(oracle_cfg.getint("limit"),
                                                     oracle_cfg.getfloat("window")))
            eval_client = LocalOracle(target, QueryBudget(oracle_cfg.getint("eval_limit"),
                                                          oracle_cfg.getfloat("window")))

    with _Stage("exfiltrate", status):
        budget = m["exfiltration"].getint("budget")
        ex = attacks.exploratory_attack(client, pool, budget, seed=seed,
                                        label_only=m["exfiltration"].getboolean("label_only"))
        ex.dataset.save(out / "exfiltrated.jsonl")
        outputs["exfiltrated"] = "exfiltrated.jsonl"
        (out / "exfiltration.txt").write_text(
            f"status={ex.status}\nrequested={budget}\ncalls={ex.calls}\ncursor={ex.cursor}\n",
            encoding="utf-8")
        summary["exfiltration_status"] = ex.status
        if ex.status == "network_error":
            from .errors import OracleUnavailable
            raise OracleUnavailable(ex.detail)
        if ex.calls == 0:
            raise RateLimited(0)
        real = ex.dataset

    with _Stage("evaluation_labels", status):
        test_labels = attacks.label_with_oracle(eval_client, test.features)
        fz.Dataset(test.features, test_labels).save(out / "test_oracle_labels.jsonl")
        outputs["test_labels"] = "test_oracle_labels.jsonl"

    with _Stage("substitute", status):
        point, base_cfg, grid = _substitute_settings(m, seed)
        if grid:
            tr, va = attacks.split_train_validation(real, 0.8, seed)
            found = attacks.hyperparameter_search(tr, va, grid, base_cfg, seed)
            point = found.point
            (out / "search.txt").write_text("".join(
                f"{p.hidden_layers}x{p.neurons_per_layer}/{p.weight_scale}/{p.minibatch}/"
                f"{p.momentum}\t{'failed' if d is None else repr(d)}\n" for p, d, _ in found.table)
                + f"chosen={point.hidden_layers}x{point.neurons_per_layer}\n", encoding="utf-8")
            outputs["search"] = "search.txt"
        train_cfg = point.config(base_cfg)
        layers = point.layers(real.dim)

    with _Stage("augment_sweep", status):
        sizes = _ints(m["sweep"]["sizes"]) or [0]
        results, gan = attacks.augmentation_sweep(real, sizes, _gan_config(m, seed), train_cfg,
                                                  layers, test.features, test_labels)
        if gan is not None:
            gan.save(out / "gan.ckpt")
            (out / "gan_loss.csv").write_text(
                "epoch,d_loss,g_loss\n" + "".join(f"{i},{d!r},{g!r}\n" for i, (d, g)
                                                  in enumerate(gan.loss_history, 1)),
                encoding="utf-8")
            outputs["gan"] = "gan.ckpt"
        rows = []
        for r in results:
            r.model.save(out / f"substitute_ns{r.n_synth}.model")
            (out / f"divergence_ns{r.n_synth}.txt").write_text(r.report.to_text(), encoding="utf-8")
            if r.n_synth:
                r.training_set.subset(np.flatnonzero(r.training_set.synthetic)).save(
                    out / f"synthetic_ns{r.n_synth}.jsonl")
            rows.append((r.n_real, r.n_synth, r.report))
        (out / "sweep.txt").write_text(metrics.render_sweep_table(rows), encoding="utf-8")
        (out / "sweep.csv").write_text(metrics.render_sweep_csv(rows), encoding="utf-8")
        outputs["sweep"] = "sweep.txt"
        summary["sweep"] = [(n_r, n_s, rep.d) for n_r, n_s, rep in rows]

    pick = m["causative"].get("substitute_ns", "best").strip()
    chosen = (min(results, key=lambda r: (r.report.d, r.n_synth)) if pick == "best"
              else next((r for r in results if r.n_synth == int(pick)), None))
    if chosen is None:
        raise StageError("causative", ValidationError(f"no sweep row with N_s={pick}"))
    substitute = chosen.model

    if m["causative"].getboolean("enabled"):
        with _Stage("causative", status):
            cands = fz.Dataset.load(rs.path("candidates"))
            cands = cands.subset(range(min(len(cands), m["causative"].getint("count"))))
            p = m["causative"].getfloat("p")
            sel = attacks.causative_select(substitute, cands.features, p)
            sel.flipped_dataset.save(out / "poisoned.jsonl")
            original = fz.Dataset.load(rs.path("target_train"))
            rep = attacks.evaluate_causative(target, original, sel.flipped_dataset, test.features)
            rnd = attacks.random_flip_selection(substitute, cands.features, len(sel.flip_indices),
                                                seed=seed)
            rep_rnd = attacks.evaluate_causative(target, original, rnd.flipped_dataset,
                                                 test.features)
            (out / "causative.txt").write_text(
                f"p={p!r}\ncandidates={len(cands)}\nflipped={len(sel.flip_indices)}\n"
                f"substitute_ns={chosen.n_synth}\n[selected]\n{rep.to_text()}"
                f"[random_baseline]\n{rep_rnd.to_text()}", encoding="utf-8")
            outputs["causative"] = "causative.txt"
            outputs["poisoned"] = "poisoned.jsonl"
            summary["causative"] = (rep.d, rep_rnd.d)

    if m["evasion"].getboolean("enabled"):
        with _Stage("evasion", status):
            cands = fz.Dataset.load(rs.path("candidates"))
            mode = attacks.EvasionMode.parse(m["evasion"]["mode"])
            sel = attacks.evasion_select(substitute, cands.features, mode, m["evasion"].getint("n"))
            rep = attacks.evaluate_evasion(target, cands.features, cands.labels, sel, seed=seed)
            (out / "evasion.txt").write_text(
                f"mode={mode}\nsubstitute_ns={chosen.n_synth}\n" + rep.to_text()
                + "indices=" + ",".join(str(i) for i in sel.indices) + "\n", encoding="utf-8")
            outputs["evasion"] = "evasion.txt"
            summary["evasion"] = (rep.selected_error, rep.baseline_error)

    client.close()


def render_run_report(run_dir: str | Path) -> str:
    run_dir = Path(run_dir)
    parts = []
    for name in ("sweep.txt", "causative.txt", "evasion.txt"):
        p = run_dir / name
        if p.exists():
            parts.append(f"== {name[:-4]} ==\n{p.read_text(encoding='utf-8')}")
    if not parts:
        raise ArtifactIOError(f"no reports found in {run_dir}")
    return "\n".join(parts)
