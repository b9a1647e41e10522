import time
from dataclasses import dataclass, field
from pathlib import Path

import pytest

from flowsr.estimator import VectorFieldEstimator
from flowsr.pipeline import cli
from flowsr.pipeline.config import RunConfig, serialize

TINY_KEYS = dict(utterances=6, seconds=0.5, steps=6, batch_size=2, crop_frames=16, layers=1,
                 model_dim=16, ff_dim=32, gl_iters=4, checkpoint_every=3)


@pytest.fixture
def tiny_cfg():
    return RunConfig(**TINY_KEYS)


def write_config(cfg: RunConfig, path) -> str:
    Path(path).write_text(serialize(cfg))
    return str(path)


@dataclass
class PipelineRun:
    root: Path
    config: str
    corpus: Path
    train_features: Path
    eval_features: Path
    run_dir: Path
    eval_csv: Path
    seconds: float = 0.0
    forward_calls: int = 0
    exit_codes: list = field(default_factory=list)

    @property
    def checkpoint(self):
        return self.run_dir / "checkpoint.fhck"


def run_pipeline(root: Path, cfg: RunConfig) -> PipelineRun:
    """synth -> prepare (train and eval) -> train -> eval through the CLI.

    Estimator forward calls during ``eval`` are counted by wrapping the
    class method, independently of the estimator's own counter.
    """
    root.mkdir(parents=True, exist_ok=True)
    r = PipelineRun(root, write_config(cfg, root / "run.cfg"), root / "corpus", root / "feat",
                    root / "evalset", root / "run", root / "eval.csv")
    c = ["--config", r.config]
    start = time.perf_counter()
    r.exit_codes.append(cli.run(["synth-corpus", *c, "--out", str(r.corpus)]))
    r.exit_codes.append(cli.run(["prepare", *c, "--manifest", str(r.corpus / "train.txt"),
                                 "--out", str(r.train_features)]))
    r.exit_codes.append(cli.run(["prepare", *c, "--eval", "--manifest", str(r.corpus / "eval.txt"),
                                 "--out", str(r.eval_features)]))
    r.exit_codes.append(cli.run(["train", *c, "--features", str(r.train_features), "--run", str(r.run_dir)]))

    original = VectorFieldEstimator.forward
    calls = [0]

    def counted(self, *args, **kwargs):
        calls[0] += 1
        return original(self, *args, **kwargs)

    VectorFieldEstimator.forward = counted
    try:
        r.exit_codes.append(cli.run(["eval", *c, "--checkpoint", str(r.checkpoint),
                                     "--features", str(r.eval_features), "--out", str(r.eval_csv),
                                     "--ablate-postproc"]))
    finally:
        VectorFieldEstimator.forward = original
    r.forward_calls = calls[0]
    r.seconds = time.perf_counter() - start
    return r


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("tiny"), RunConfig(**TINY_KEYS))


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """The full desk experiment at default settings (a few minutes)."""
    return run_pipeline(tmp_path_factory.mktemp("desk-a"), RunConfig())


@pytest.fixture(scope="session")
def desk_rerun(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("desk-b"), RunConfig())


# --------------------------------------------------------------------------
# acceptance verdicts: one line per criterion, repeated in the terminal summary

_VERDICTS = {}


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
