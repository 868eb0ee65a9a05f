"""Acceptance suite: eleven end-to-end criteria at their stated tolerances.

Each test prints one ``[ACCEPTANCE n] PASS|FAIL`` line. Run on its own with
``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import math
import shutil
import subprocess
import sys
import threading
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from apiattack import gan, metrics, nn_core, pipeline
from apiattack.client import OracleClient
from apiattack.errors import RateLimited
from apiattack.featurizer import Dataset
from apiattack.fixtures import gaussian_fixture
from apiattack.oracle import QueryBudget, TargetClassifier, train_mock_target
from apiattack.service import free_port, running_service

sys.path.insert(0, str(Path(__file__).parent))
import helpers  # noqa: E402

SEEDS = range(5)
REPO = Path(__file__).resolve().parents[1]
DEMO_MANIFEST = REPO / "demo" / "demo.ini"


_capture = {}


@pytest.fixture(autouse=True)
def _uncaptured(capsys):
    _capture["capsys"] = capsys
    yield
    _capture.clear()


def report(n: int, ok: bool, detail: str) -> None:
    """Print one verdict line straight to the terminal, bypassing output capture."""
    line = f"[ACCEPTANCE {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
    with _capture["capsys"].disabled():
        print(line, flush=True)


# shared fixtures ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def bundled(tmp_path_factory):
    """Bundled text fixture (k=50) and the naive Bayes target trained on its 2000-sample split."""
    d = tmp_path_factory.mktemp("bundled")
    pipeline.make_fixtures(d / "fixtures", k=50, seed=0)
    target = train_mock_target(Dataset.load(d / "fixtures" / "target_train.jsonl"))
    target.save(d / "fixtures" / "target.model")
    return d


def _manifest(workdir: Path, seed: int, **sections) -> Path:
    """Demo manifest with overrides, written next to a ``fixtures`` directory."""
    m = pipeline.load_manifest(DEMO_MANIFEST)
    m["run"]["seed"] = str(seed)
    for sec, values in sections.items():
        for k, v in values.items():
            m[sec][k] = str(v)
    path = workdir / f"seed{seed}-{len(list(workdir.glob('*.ini')))}.ini"
    pipeline.write_ini(m, path)
    return path


_trend_cache: dict = {}


def trend_runs(bundled: Path):
    """Per seed: the N_r=100 sweep {0, 100} with causative and evasion stages, plus a
    3000-sample plain run. Shared by criteria 6, 7 and 8."""
    if "runs" in _trend_cache:
        return _trend_cache["runs"], _trend_cache["seconds"]
    t0 = time.perf_counter()
    runs = []
    for s in SEEDS:
        small = pipeline.run_attack(_manifest(bundled, s, sweep={"sizes": "0,100"}),
                                    output_dir=bundled / f"small{s}")
        large = pipeline.run_attack(
            _manifest(bundled, s, sweep={"sizes": "0"}, exfiltration={"budget": 3000},
                      oracle={"limit": 3000}, causative={"enabled": "false"},
                      evasion={"enabled": "false"}),
            output_dir=bundled / f"large{s}")
        runs.append((small, large))
    _trend_cache["runs"] = runs
    _trend_cache["seconds"] = time.perf_counter() - t0
    return runs, _trend_cache["seconds"]


# 1 ----------------------------------------------------------------------------------------

def test_01_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    errors = []
    for _ in range(50):
        errors.append(helpers.relative_errors(*helpers.mlp_case(rng)))
    for _ in range(10):
        da, dn, ga, gn = helpers.gan_case(rng)
        errors += [helpers.relative_errors(da, dn), helpers.relative_errors(ga, gn)]
    err = np.concatenate(errors)
    secs = time.perf_counter() - t0
    share = float((err <= 1e-4).mean())
    ok = share >= 0.99 and err.max() <= 1e-3 and secs < 60
    report(1, ok, f"{err.size} params, {share:.2%} within 1e-4, max rel err {err.max():.2e}, {secs:.1f}s")
    assert ok


# 2 ----------------------------------------------------------------------------------------

def test_02_optimizer_exactness():
    p = [np.array([1.0])]
    s = nn_core.OptimizerState.for_params("sgd_momentum", p)
    nn_core.sgd_momentum_step(p, [np.array([1.0])], s, 0.1, 0.9)
    one = abs(p[0][0] - 0.9) <= 1e-12 and abs(s.velocity[0][0] - 1.0) <= 1e-12
    nn_core.sgd_momentum_step(p, [np.array([1.0])], s, 0.1, 0.9)
    two = abs(p[0][0] - 0.71) <= 1e-12

    p = [np.array([1.0])]
    s = nn_core.OptimizerState.for_params("adam", p)
    nn_core.adam_step(p, [np.array([0.5])], s, 1e-5, 0.9, 0.999, 1e-8)
    m_hat, v_hat = s.m[0][0] / 0.1, s.v[0][0] / 0.001
    expect = 1 - 1e-5 * 0.5 / (math.sqrt(0.25) + 1e-8)
    adam = (abs(m_hat - 0.5) <= 1e-12 and abs(v_hat - 0.25) <= 1e-12
            and abs(p[0][0] - expect) <= 1e-12)

    p = [np.array([1.0])]
    s = nn_core.OptimizerState.for_params("adam", p)
    nn_core.adam_step(p, [np.array([0.0])], s, 0.1)
    zero = p[0][0] == 1.0
    ok = one and two and adam and zero
    report(2, ok, f"sgd step1={one} step2={two}, adam step={adam} zero-grad={zero}")
    assert ok


# 3 ----------------------------------------------------------------------------------------

def test_03_metric_oracle_equivalence():
    rng = np.random.default_rng(3)
    checked = mismatches = 0
    while checked < 1000:
        n = int(rng.integers(2, 13))
        ref = rng.integers(1, 3, n)
        if len(set(ref.tolist())) < 2:
            continue
        cand = rng.integers(1, 3, n)
        r = metrics.divergence_from_labels(ref, cand)
        n1, n2, m1, m2 = helpers.brute_divergence(ref.tolist(), cand.tolist())
        same = ((r.n1, r.n2, r.m1, r.m2) == (n1, n2, m1, m2)
                and r.exact("d1") == Fraction(m1, n1) and r.exact("d2") == Fraction(m2, n2)
                and r.exact("d") == Fraction(m1 + m2, n1 + n2)
                and r.d == (m1 + m2) / (n1 + n2))
        mismatches += not same
        checked += 1
    report(3, mismatches == 0, f"{checked} random cases, {mismatches} mismatches")
    assert mismatches == 0


# 4 ----------------------------------------------------------------------------------------

def test_04_objective_fixed_points():
    v = gan.gan_value([0.5] * 16, [0.5] * 16)
    g = gan.generator_objective([1.0] * 16)
    ok = abs(v + 2 * math.log(2)) <= 1e-12 and g == 0.0
    report(4, ok, f"value(D=0.5)={v!r}, generator objective(D=1)={g!r}")
    assert ok


# 5 ----------------------------------------------------------------------------------------

# Reference architecture shrunk tenfold for a 2-D toy (noise 100 -> 10, widths /10).
# Epochs, batch size and the 2:1 schedule are kept; the learning rate is raised.
GAUSSIAN_GAN = dict(noise_dim=10, generator_hidden=(10, 50), discriminator_hidden=(50, 50),
                    learning_rate=2e-3, adam_beta1=0.5, epochs=500, batch_size=32,
                    d_steps_per_g_step=2)


def gaussian_deviation(seed: int) -> float:
    """Largest |synthetic mean - real mean| / real std over both classes and features."""
    real = gaussian_fixture(100, seed=seed)
    g = gan.train_gan(real, gan.GanConfig(seed=seed, **GAUSSIAN_GAN))
    worst = 0.0
    for c in (1, 2):
        R = real.features[real.labels == c]
        S = gan.synthesize(g, c, 1000, seed=seed, discrete=False).features
        worst = max(worst, float(np.max(np.abs(S.mean(0) - R.mean(0)) / R.std(0))))
    return worst


def test_05_gan_gaussian_convergence():
    t0 = time.perf_counter()
    devs = [gaussian_deviation(s) for s in SEEDS]
    secs = time.perf_counter() - t0
    med = float(np.median(devs))
    ok = med <= 0.5 and secs < 300
    report(5, ok, f"per-seed worst mean offset (std units) {np.round(devs, 3).tolist()}, "
                  f"median {med:.3f} (<= 0.5), {secs:.0f}s")
    assert ok


# 6 ----------------------------------------------------------------------------------------

def _duplicate_control(run_dir: Path, seed: int) -> float:
    """Substitute trained on the 100 real samples repeated twice (no synthetic data)."""
    m = pipeline.load_manifest(DEMO_MANIFEST)
    point, base, _ = pipeline._substitute_settings(m, seed)
    real = Dataset.load(run_dir / "exfiltrated.jsonl")
    test = Dataset.load(run_dir / "test_oracle_labels.jsonl")
    model, _ = nn_core.train(point.layers(real.dim), Dataset.concat(real, real), point.config(base))
    return metrics.divergence_from_labels(test.labels, nn_core.predict_labels(model, test.features)).d


def test_06_augmentation_trend(bundled):
    runs, secs = trend_runs(bundled)
    plain = [dict((s, d) for _, s, d in small["sweep"])[0] for small, _ in runs]
    aug = [dict((s, d) for _, s, d in small["sweep"])[100] for small, _ in runs]
    full = [large["sweep"][0][2] for _, large in runs]
    dup = [_duplicate_control(Path(small["output_dir"]), s) for s, (small, _) in zip(SEEDS, runs)]
    mp, ma, mf, md = (float(np.median(v)) for v in (plain, aug, full, dup))
    gan_ok = ma <= mp - 0.03
    full_ok = mf <= mp - 0.05
    ok = gan_ok and full_ok and secs < 600
    report(6, ok, f"median d: N_s=0 {mp:.3f}, N_s=100 {ma:.3f} (need <= {mp - 0.03:.3f}); "
                  f"3000 real {mf:.3f} (need <= {mp - 0.05:.3f}); "
                  f"control with real data duplicated {md:.3f}; {secs:.0f}s")
    assert ok


# 7 ----------------------------------------------------------------------------------------

def test_07_causative_beats_random_flips(bundled):
    runs, _ = trend_runs(bundled)
    pairs = [small["causative"] for small, _ in runs]
    wins = sum(sel > rnd for sel, rnd in pairs)
    ok = wins >= 4
    report(7, ok, "d(T,T~) selected vs random per seed "
                  + ", ".join(f"{a:.3f}/{b:.3f}" for a, b in pairs) + f"; wins {wins}/5 (need 4)")
    assert ok


# 8 ----------------------------------------------------------------------------------------

def test_08_evasion_selection_efficacy(bundled):
    runs, _ = trend_runs(bundled)
    pairs = [small["evasion"] for small, _ in runs]
    wins = sum(sel >= 1.5 * base and sel > 0 for sel, base in pairs)
    ok = wins >= 4
    report(8, ok, "target error selected vs random per seed "
                  + ", ".join(f"{a:.2f}/{b:.2f}" for a, b in pairs) + f"; wins {wins}/5 (need 4)")
    assert ok


# 9 ----------------------------------------------------------------------------------------

class Clock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


def test_09_rate_limiter_exactness(bundled):
    target = TargetClassifier.load(bundled / "fixtures" / "target.model")
    x = Dataset.load(bundled / "fixtures" / "test.jsonl").features[0]
    clock = Clock()
    budget = QueryBudget(1000, 86400, clock)
    codes: list[str] = []
    lock = threading.Lock()

    with running_service(target, budget) as url:
        def client(n):
            got = []
            with OracleClient(url) as c:
                for _ in range(n):
                    try:
                        c.classify(x)
                        got.append("ok")
                    except RateLimited:
                        got.append("429")
            with lock:
                codes.extend(got)

        per = [5000 // 16 + (i < 5000 % 16) for i in range(16)]
        threads = [threading.Thread(target=client, args=(n,)) for n in per]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        concurrent_ok = len(codes) == 5000 and codes.count("ok") == 1000

        clock.t = 86400.0
        with OracleClient(url) as c:
            seq = []
            for _ in range(1001):
                try:
                    seq.append(c.classify(x).remaining_budget)
                except RateLimited as exc:
                    seq.append(("429", exc.retry_after_seconds))
            clock.t = 2 * 86400.0
            after = c.classify(x).remaining_budget
    sequential_ok = seq[999] == 0 and seq[1000] == ("429", 86400) and after == 999
    ok = concurrent_ok and sequential_ok
    report(9, ok, f"16 clients x 5000 requests: {codes.count('ok')} allowed, {codes.count('429')} "
                  f"rejected; call 1001 -> {seq[1000]}; after rollover remaining {after}")
    assert ok


# 10 ---------------------------------------------------------------------------------------

def _run_demo_copy(root: Path, bundled: Path) -> Path:
    shutil.copytree(bundled / "fixtures", root / "fixtures")
    shutil.copy(DEMO_MANIFEST, root / "demo.ini")
    pipeline.run_attack(root / "demo.ini")
    return root / "run"


def test_10_replay_is_byte_identical(bundled, tmp_path):
    a = _run_demo_copy(tmp_path / "a", bundled)
    b = _run_demo_copy(tmp_path / "b", bundled)
    files_a = sorted(p.name for p in a.iterdir())
    files_b = sorted(p.name for p in b.iterdir())
    differ = [n for n in files_a if (a / n).read_bytes() != (b / n).read_bytes()] if files_a == files_b else ["listing"]
    ok = not differ and len(files_a) > 10
    report(10, ok, f"{len(files_a)} artifacts compared, differing: {differ or 'none'}")
    assert ok


# 11 ---------------------------------------------------------------------------------------

def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "apiattack", *args], cwd=cwd,
                          capture_output=True, text=True, timeout=900)


def test_11_end_to_end_demo(tmp_path):
    t0 = time.perf_counter()
    shutil.copy(DEMO_MANIFEST, tmp_path / "demo.ini")
    steps = [_cli("make-fixtures", "--output-dir", "fixtures", "--seed", "0", cwd=tmp_path),
             _cli("train-target", "--train", "fixtures/target_train.jsonl",
                  "--output", "fixtures/target.model", "--seed", "0", cwd=tmp_path)]
    port = free_port()
    server = subprocess.Popen([sys.executable, "-m", "apiattack", "serve", "--target",
                               "fixtures/target.model", "--port", str(port), "--seed", "0"],
                              cwd=tmp_path, stdout=subprocess.PIPE, stderr=subprocess.STDOUT)
    try:
        url = f"http://127.0.0.1:{port}"
        with OracleClient(url) as probe:
            deadline = time.monotonic() + 30
            while not probe.healthy():
                assert time.monotonic() < deadline, "server did not come up"
                time.sleep(0.1)
        steps.append(_cli("attack", "--manifest", "demo.ini", "--endpoint", url, cwd=tmp_path))
    finally:
        server.terminate()
        server.wait(timeout=10)
    steps.append(_cli("report", "run", cwd=tmp_path))
    secs = time.perf_counter() - t0
    codes = [s.returncode for s in steps]
    out = steps[-1].stdout
    ok = (codes == [0] * 4 and secs < 900 and "== sweep ==" in out
          and "== causative ==" in out and "== evasion ==" in out)
    report(11, ok, f"fixtures/train/serve+attack/report exit codes {codes}, {secs:.0f}s")
    if not ok:
        for s in steps:
            print(s.stdout, s.stderr)
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
