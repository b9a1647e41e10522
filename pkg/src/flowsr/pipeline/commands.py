"""Pipeline stages behind the CLI subcommands.

Every stage is deterministic given the config seed. Randomness is keyed by
``(seed, stage, index)`` so results do not depend on processing order and
training can resume mid-run with identical subsequent losses.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..audio_io import AudioSignal, ChebyshevSpec, read_wav, simulate_lr, write_wav
from ..cfm import ConditionPair, PathParams, draw_training_point
from ..errors import DataError, DomainError, FlowSRError, TrainingError
from ..estimator import (AdamState, VectorFieldEstimator, adam_step, load_checkpoint,
                         save_checkpoint)
from ..metrics import lsd_report, rtf
from ..postproc import replace_lowband
from ..sampler import Method, SolverConfig, super_resolve
from ..spectral import mel_of, mel_to_waveform, read_spectrogram, write_spectrogram
from .config import RunConfig
from .corpus import synth_utterance

log = logging.getLogger(__name__)

# stage tags for seeded streams
_CORPUS, _PREPARE, _TRAIN, _INFER = 0, 1, 2, 3

CHECKPOINT_NAME = "checkpoint.fhck"
LOSS_LOG = "loss.csv"


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def _read_lines(path) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]


# --------------------------------------------------------------------------
# synth-corpus

def synth_corpus(cfg: RunConfig, out_dir) -> Path:
    """Write the synthetic corpus and ``manifest.txt``, ``train.txt``, ``eval.txt``.

    Manifest lines are paths relative to ``out_dir``. Returns the path of
    ``manifest.txt``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(cfg.utterances):
        sig = synth_utterance([cfg.seed, _CORPUS, i], cfg.high_rate, cfg.seconds, cfg.low_rates)
        name = f"utt{i:04d}.wav"
        write_wav(sig, out / name, "32f")
        names.append(name)
    order = _rng(cfg.seed, _CORPUS, 1 << 20).permutation(len(names))
    n_eval = max(1, int(round(cfg.eval_fraction * len(names))))
    eval_idx = set(order[:n_eval].tolist())
    (out / "manifest.txt").write_text("".join(n + "\n" for n in names))
    (out / "train.txt").write_text("".join(n + "\n" for i, n in enumerate(names) if i not in eval_idx))
    (out / "eval.txt").write_text("".join(n + "\n" for i, n in enumerate(names) if i in eval_idx))
    log.info("wrote %d utterances (%d eval) to %s", len(names), n_eval, out)
    return out / "manifest.txt"


# --------------------------------------------------------------------------
# prepare

def _load_manifest(manifest) -> list[tuple[str, AudioSignal]]:
    manifest = Path(manifest)
    if not manifest.exists():
        raise DataError(f"manifest {manifest} does not exist")
    items = []
    for line in _read_lines(manifest):
        path = manifest.parent / line
        try:
            items.append((str(path.resolve()), read_wav(path)))
        except (OSError, DataError) as exc:
            log.warning("skipping %s: %s", path, exc)
    return items


def prepare(cfg: RunConfig, manifest, out_dir, evaluation: bool = False) -> Path:
    """Simulate low-resolution inputs and store features.

    Training: one randomly degraded copy per utterance, stored as ``x0``
    (mel of the upsampled input) and ``x1`` (mel of the target) grids.
    Evaluation: the fixed order-8, 0.05 dB filter at every configured input
    rate; the low-rate waveform is stored for inference.

    Writes ``index.tsv`` and returns its path.
    """
    items = _load_manifest(manifest)
    if not items:
        raise DataError(f"no readable audio in {manifest}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fb = cfg.filterbank()
    rows = []
    for idx, (path, y) in enumerate(items):
        if y.sample_rate != cfg.high_rate:
            log.warning("skipping %s: rate %d, expected %d", path, y.sample_rate, cfg.high_rate)
            continue
        stem = f"{idx:05d}_{Path(path).stem}"
        if evaluation:
            for l in cfg.low_rates:
                spec = ChebyshevSpec(cfg.eval_order, cfg.eval_ripple, l / 2)
                x_l, _ = simulate_lr(y, l, spec)
                lr_path = out / f"{stem}_{l}.wav"
                write_wav(x_l, lr_path, "32f")
                rows.append([stem, path, lr_path.name, l, spec.order, spec.ripple_db])
        else:
            rng = _rng(cfg.seed, _PREPARE, idx)
            order = int(rng.integers(cfg.order_min, cfg.order_max + 1))
            ripple = float(rng.uniform(cfg.ripple_min, cfg.ripple_max))
            l = int(cfg.low_rates[rng.integers(len(cfg.low_rates))])
            _, x_h = simulate_lr(y, l, ChebyshevSpec(order, ripple, l / 2))
            write_spectrogram(out / f"{stem}.x0.fhsp", mel_of(x_h, cfg.stft, fb, cfg.mel_floor))
            write_spectrogram(out / f"{stem}.x1.fhsp", mel_of(y, cfg.stft, fb, cfg.mel_floor))
            rows.append([stem, path, "", l, order, ripple])
    if not rows:
        raise DataError("preparation produced no examples")
    header = "name\tsource\tlow_res\tlow_rate\torder\tripple_db\n"
    body = "".join("\t".join(str(v) for v in r) + "\n" for r in rows)
    (out / "index.tsv").write_text(header + body)
    log.info("prepared %d %s examples in %s", len(rows), "eval" if evaluation else "train", out)
    return out / "index.tsv"


def read_index(features_dir) -> list[dict]:
    path = Path(features_dir) / "index.tsv"
    if not path.exists():
        raise DataError(f"{path} not found; run 'prepare' first")
    lines = path.read_text().splitlines()
    keys = lines[0].split("\t")
    return [dict(zip(keys, ln.split("\t"))) for ln in lines[1:] if ln]


def load_pairs(features_dir) -> list[ConditionPair]:
    base = Path(features_dir)
    pairs = []
    for row in read_index(base):
        x0 = read_spectrogram(base / f"{row['name']}.x0.fhsp")
        x1 = read_spectrogram(base / f"{row['name']}.x1.fhsp")
        pairs.append(ConditionPair(x0, x1))
    if not pairs:
        raise DataError(f"no training pairs in {base}")
    return pairs


# --------------------------------------------------------------------------
# train

def _crop(pair: ConditionPair, frames: int, rng, floor: float) -> ConditionPair:
    n = pair.x0.shape[0]
    if n < frames:
        pad = ((0, frames - n), (0, 0))
        fill = np.log(floor)
        return ConditionPair(np.pad(pair.x0, pad, constant_values=fill),
                             np.pad(pair.x1, pad, constant_values=fill))
    s = int(rng.integers(0, n - frames + 1))
    return ConditionPair(pair.x0[s:s + frames], pair.x1[s:s + frames])


def training_batch(cfg: RunConfig, pairs, step: int):
    """Assemble the (x_t, X_h, t, u) batch for ``step``; pure in ``(seed, step)``."""
    rng = _rng(cfg.seed, _TRAIN, step)
    idx = rng.integers(0, len(pairs), size=cfg.batch_size)
    xs, conds, ts, us = [], [], [], []
    for i in idx:
        z = _crop(pairs[i], cfg.crop_frames, rng, cfg.mel_floor)
        z = ConditionPair(z.x0.astype(np.float64), z.x1.astype(np.float64))
        t, point, u = draw_training_point(cfg.kind, z, rng, cfg.path_params)
        xs.append(point.x_t)
        conds.append(z.x0)
        ts.append(t)
        us.append(u)
    return np.stack(xs), np.stack(conds), np.array(ts), np.stack(us), idx


@dataclass
class TrainResult:
    checkpoint: Path
    losses: list


def train(cfg: RunConfig, features_dir, run_dir, resume=None, steps: int | None = None,
          progress=None) -> TrainResult:
    """Seeded CFM training loop with periodic checkpoints and a loss log.

    ``steps`` overrides ``cfg.steps`` as the final step count. On a
    non-finite loss the diagnostics are written to ``diagnostics.json`` and
    :class:`TrainingError` is raised.
    """
    pairs = load_pairs(features_dir)
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    total = cfg.steps if steps is None else steps
    if resume is not None:
        ck = load_checkpoint(resume, expected=cfg.estimator)
        if ck.kind is not cfg.kind:
            raise DataError(f"checkpoint was trained on path {ck.kind.value}, config asks for {cfg.path}")
        est, state = ck.estimator, ck.state or AdamState(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    else:
        est = VectorFieldEstimator(cfg.estimator, seed=cfg.seed)
        state = AdamState(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    start = state.step
    log_path = run / LOSS_LOG
    mode = "a" if resume is not None and log_path.exists() else "w"
    losses = []
    ckpt = run / CHECKPOINT_NAME
    with open(log_path, mode) as fh:
        if mode == "w":
            fh.write("step,loss\n")
        for step in range(start, total):
            x_t, cond, t, u, idx = training_batch(cfg, pairs, step)
            try:
                loss, grads = est.loss_and_grad(x_t, cond, t, u,
                                                diagnostics={"step": step, "batch": idx.tolist()})
            except TrainingError as exc:
                (run / "diagnostics.json").write_text(json.dumps(exc.diagnostics, indent=2))
                raise
            adam_step(est.params, grads, state, cfg.lr)
            losses.append(loss)
            fh.write(f"{step + 1},{loss:.8g}\n")
            if progress is not None:
                progress(step + 1, loss)
            if (step + 1) % cfg.checkpoint_every == 0 or step + 1 == total:
                save_checkpoint(ckpt, est, cfg.kind, cfg.sigma_min, state, {"step": step + 1})
    if start >= total and not ckpt.exists():
        save_checkpoint(ckpt, est, cfg.kind, cfg.sigma_min, state, {"step": start})
    return TrainResult(ckpt, losses)


def smoothed(losses, window: int) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    x = np.asarray(losses, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(x)])
    i = np.arange(1, x.size + 1)
    lo = np.maximum(0, i - window)
    return (c[i] - c[lo]) / (i - lo)


# --------------------------------------------------------------------------
# infer

def load_model(checkpoint, cfg: RunConfig):
    ck = load_checkpoint(checkpoint, expected=cfg.estimator)
    return ck.estimator, ck.kind, ck.sigma_min


@dataclass
class InferenceRun:
    output: AudioSignal      # after low-band replacement (or bare when disabled)
    bare: AudioSignal        # synthesizer output before replacement
    x_h: AudioSignal
    nfe: int
    wall: float              # seconds, whole chain
    wall_bare: float         # seconds, up to synthesis


def run_inference(est, kind, sigma_min, x_l: AudioSignal, cfg: RunConfig, solver: SolverConfig,
                  postproc: bool = True, rng=None) -> InferenceRun:
    fb = cfg.filterbank()
    start = time.perf_counter()
    res = super_resolve(est, x_l, cfg.high_rate, solver, kind, PathParams(sigma_min),
                        cfg.stft, fb, cfg.gl_iters, rng)
    bare_done = time.perf_counter()
    out = res.audio
    if postproc:
        out = replace_lowband(out, x_l, x_l.sample_rate / 2, cfg.stft, cfg.crossfade_bins)
    end = time.perf_counter()
    return InferenceRun(out, res.audio, res.x_h, res.nfe, end - start, bare_done - start)


def infer(cfg: RunConfig, checkpoint, in_wav, out_wav, solver: SolverConfig | None = None,
          postproc: bool = True) -> dict:
    est, kind, sigma = load_model(checkpoint, cfg)
    x_l = read_wav(in_wav)
    if x_l.sample_rate >= cfg.high_rate:
        raise DomainError(f"input rate {x_l.sample_rate} must be below {cfg.high_rate}")
    solver = solver or cfg.solver
    before = est.n_forward
    run = run_inference(est, kind, sigma, x_l, cfg, solver, postproc)
    write_wav(run.output, out_wav, "32f")
    return {"nfe": est.n_forward - before, "rtf": rtf(x_l.duration, run.wall),
            "seconds": run.output.duration}


# --------------------------------------------------------------------------
# eval

EVAL_COLUMNS = ["utterance", "input_rate", "system", "nfe", "lsd", "lsd_lf", "lsd_hf", "rtf"]


def _fmt(v) -> str:
    return "" if v is None else (f"{v:.6f}" if isinstance(v, float) else str(v))


def evaluate(cfg: RunConfig, checkpoint, features_dir, out_csv=None, ablate_postproc: bool = False,
             solver: SolverConfig | None = None, limit: int | None = None) -> list[dict]:
    """Evaluate on a prepared eval set and write the CSV report.

    Systems per utterance and input rate: ``input`` (upsampled LR input),
    ``gt-recon`` (reference synthesizer on the true mel), ``gt-recon+post``,
    ``output`` and, with ``ablate_postproc``, ``no-postproc``. A ``mean``
    row closes each (input rate, system) group.
    """
    est, kind, sigma = load_model(checkpoint, cfg)
    solver = solver or cfg.solver
    base = Path(features_dir)
    rows = read_index(base)
    if limit is not None:
        rows = rows[:limit]
    if not rows:
        raise DataError(f"no evaluation rows in {base}")
    fb = cfg.filterbank()
    scfg = cfg.stft
    gt_cache = {}
    records = []
    for i, row in enumerate(rows):
        y = read_wav(row["source"])
        x_l = read_wav(base / row["low_res"])
        l = int(row["low_rate"])
        cut = l / 2
        n = len(y)

        def add(system, sig, nfe=None, rate_factor=None):
            rep = lsd_report(y, sig, cut, scfg)
            records.append({"utterance": row["name"], "input_rate": l, "system": system,
                            "nfe": nfe, "lsd": rep.lsd, "lsd_lf": rep.lsd_lf,
                            "lsd_hf": rep.lsd_hf, "rtf": rate_factor})

        before = est.n_forward
        run = run_inference(est, kind, sigma, x_l, cfg, solver, True, _rng(cfg.solver_seed, _INFER, i))
        used = est.n_forward - before
        add("input", run.x_h)
        if row["source"] not in gt_cache:
            gt_cache[row["source"]] = mel_to_waveform(mel_of(y, scfg, fb, cfg.mel_floor), fb, scfg,
                                                      cfg.gl_iters, out_len=n)
        gt = gt_cache[row["source"]]
        add("gt-recon", gt)
        add("gt-recon+post", replace_lowband(gt, x_l, cut, scfg, cfg.crossfade_bins))
        add("output", run.output, used, rtf(x_l.duration, run.wall))
        if ablate_postproc:
            add("no-postproc", run.bare, used, rtf(x_l.duration, run.wall_bare))

    report = []
    for l in sorted({r["input_rate"] for r in records}):
        systems = []
        for r in records:
            if r["input_rate"] == l and r["system"] not in systems:
                systems.append(r["system"])
        group = [r for r in records if r["input_rate"] == l]
        report.extend(group)
        for s in systems:
            sel = [r for r in group if r["system"] == s]
            mean = {"utterance": "mean", "input_rate": l, "system": s}
            for k in ("lsd", "lsd_lf", "lsd_hf"):
                mean[k] = float(np.mean([r[k] for r in sel]))
            nfes = [r["nfe"] for r in sel if r["nfe"] is not None]
            mean["nfe"] = float(np.mean(nfes)) if nfes else None
            rtfs = [r["rtf"] for r in sel if r["rtf"] is not None]
            mean["rtf"] = float(np.mean(rtfs)) if rtfs else None
            report.append(mean)
    if out_csv is not None:
        write_report(report, out_csv)
    return report


def write_report(rows, path, columns=EVAL_COLUMNS) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue())


# --------------------------------------------------------------------------
# bench

BENCH_COLUMNS = ["method", "steps", "nfe", "rtf", "lsd", "lsd_hf"]


def bench(cfg: RunConfig, checkpoint, features_dir, solvers, out_csv=None, limit: int | None = None,
          repeats: int = 1) -> list[dict]:
    """Mean RTF and LSD per solver setting over the eval set.

    ``nfe`` is the instrumented estimator call count per utterance. With
    ``repeats > 1`` each utterance is timed several times and the fastest
    run is kept. Settings are interleaved within each repeat so that slow
    drift in machine speed affects all of them alike.
    """
    est, kind, sigma = load_model(checkpoint, cfg)
    base = Path(features_dir)
    rows = read_index(base)[: limit]
    if not rows:
        raise DataError(f"no evaluation rows in {base}")
    data = [(read_wav(r["source"]), read_wav(base / r["low_res"]), int(r["low_rate"])) for r in rows]
    rtfs, lsds, hfs, calls = ([[] for _ in solvers] for _ in range(4))
    for i, (y, x_l, l) in enumerate(data):
        best = [None] * len(solvers)
        outs = [None] * len(solvers)
        for _ in range(repeats):
            for j, solver in enumerate(solvers):
                before = est.n_forward
                run = run_inference(est, kind, sigma, x_l, cfg, solver, True,
                                    _rng(cfg.solver_seed, _INFER, i))
                calls[j].append(est.n_forward - before)
                outs[j] = run.output
                best[j] = run.wall if best[j] is None else min(best[j], run.wall)
        for j in range(len(solvers)):
            rep = lsd_report(y, outs[j], l / 2, cfg.stft)
            rtfs[j].append(rtf(x_l.duration, best[j]))
            lsds[j].append(rep.lsd)
            hfs[j].append(rep.lsd_hf)
    table = []
    for j, solver in enumerate(solvers):
        if len(set(calls[j])) != 1:
            raise FlowSRError(f"inconsistent estimator call counts {sorted(set(calls[j]))}")
        table.append({"method": solver.method.value, "steps": solver.steps, "nfe": calls[j][0],
                      "rtf": float(np.mean(rtfs[j])), "lsd": float(np.mean(lsds[j])),
                      "lsd_hf": float(np.mean(hfs[j]))})
    if out_csv is not None:
        write_report(table, out_csv, BENCH_COLUMNS)
    return table


def parse_solver_list(spec: str, seed: int = 0) -> list[SolverConfig]:
    """``"euler:1,euler:4,midpoint:1"`` -> solver configs (steps after the colon)."""
    out = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        method, _, steps = item.partition(":")
        out.append(SolverConfig(Method(method), int(steps or 1), seed))
    return out
