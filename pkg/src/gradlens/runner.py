"""Experiment runner: the training loop, sweeps, validation, persistence.

One step of the loop: refresh the sampler from current norm estimates,
draw a task per group (or per batch), roll out each group on its own
derived RNG stream, normalize advantages, update the per-task norm
estimates from split-half cross products, apply the batch gradient with
clipped SGD, and append one StepRecord per registered task (tasks not
sampled this step carry their previous telemetry forward, so every task
has exactly one row per step).

Determinism: every random draw comes from a substream addressed by
(seed, domain, counters), instance streams advance per task in group
order before any parallel fan-out, and gradient reduction follows group
order, so outputs are byte-identical across repeated runs and across
worker counts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from gradlens import __version__, kernels
from gradlens.config import ExperimentConfig
from gradlens.engine import (
    RolloutGroup,
    fill_advantages,
    group_gradient,
    group_policy_gradient,
    rollout_group,
    sgd_step,
)
from gradlens.errors import BoundsError, ConfigError, NumericError
from gradlens.metrics import (
    StepRecord,
    correlation_report,
    gain_report,
    write_records_csv,
)
from gradlens.policy import ParamVector, Policy
from gradlens.probe import (
    NormTracker,
    cross_product_sqnorm,
    resolve_subset,
    split_halves,
    subset_gradient,
)
from gradlens.rngstreams import substream
from gradlens.scheduler import make_state, sample_task
from gradlens.tasks import sample_instance

RECORDS_FILE = "records.csv"
GAINS_FILE = "gains.json"
CORRELATIONS_FILE = "correlations.json"
MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.resolved.json"


@dataclass
class RunManifest:
    config_hash: str
    artifact_version: str
    kernel_backend: str
    start_step: int
    end_step: int
    status: str
    files: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# Persistence helpers.
# ---------------------------------------------------------------------------


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_write_bytes(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_checkpoint(out_dir: str, name: str, params: ParamVector) -> list[str]:
    """Store a ParamVector as little-endian float64 plus a JSON header."""
    header = {
        "length": len(params),
        "dtype": "<f8",
        "segments": [[s.name, s.offset, s.length] for s in params.segments],
    }
    base = os.path.join(out_dir, "checkpoints")
    os.makedirs(base, exist_ok=True)
    json_path = os.path.join(base, f"{name}.json")
    bin_path = os.path.join(base, f"{name}.bin")
    _atomic_write_text(json_path, json.dumps(header, indent=2) + "\n")
    _atomic_write_bytes(bin_path, params.values.astype("<f8").tobytes())
    return [f"checkpoints/{name}.json", f"checkpoints/{name}.bin"]


def read_checkpoint(out_dir: str, name: str) -> ParamVector:
    base = os.path.join(out_dir, "checkpoints")
    with open(os.path.join(base, f"{name}.json")) as fh:
        header = json.load(fh)
    raw = np.fromfile(os.path.join(base, f"{name}.bin"), dtype="<f8")
    if raw.shape[0] != header["length"]:
        raise ConfigError(f"checkpoint {name} length mismatch")
    segments = tuple((n, o, l) for n, o, l in header["segments"])
    return ParamVector(raw.astype(np.float64), segments)


def default_output_root() -> str:
    return os.environ.get("GRADLENS_OUT", "runs")


def _resolve_out_dir(config: ExperimentConfig, out_dir: str | None) -> str:
    if out_dir:
        return out_dir
    if config.output_dir:
        return config.output_dir
    root = default_output_root()
    base = os.path.join(root, f"run-{config.config_hash()[:8]}-seed{config.seed}")
    candidate, n = base, 0
    while os.path.exists(candidate):
        n += 1
        candidate = f"{base}-{n}"
    return candidate


# ---------------------------------------------------------------------------
# Training loop.
# ---------------------------------------------------------------------------


def _map_ordered(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run(config: ExperimentConfig, out_dir: str | None = None) -> RunManifest:
    """Execute the configured run and write all artifacts to out_dir."""
    config.validate()
    out = _resolve_out_dir(config, out_dir)
    os.makedirs(out, exist_ok=True)

    policy = Policy(config.policy)
    params = policy.init_params()
    ref_params = params.copy()
    tasks = {t.id: t for t in config.tasks}
    task_ids = [t.id for t in config.tasks]
    seed = config.seed
    train = config.train
    n_groups = train.groups_per_batch

    subset_names = resolve_subset(policy.segments, config.probe.subset)
    tracker = NormTracker(task_ids, config.probe.ema_coeff, subset_names)
    instance_counters = {tid: 0 for tid in task_ids}
    records: list[StepRecord] = []
    fresh_records: list[StepRecord] = []
    last_row = {
        tid: {
            "reward_mean": 0.0,
            "abs_adv_mean": 0.0,
            "response_len": tasks[tid].episode_len,
            "padding_len": 0,
        }
        for tid in task_ids
    }

    files: dict[str, str] = {}
    for rel in write_checkpoint(out, "params_init", params):
        files[rel] = ""

    status = "completed"
    end_step = 0

    def rollout_job(job):
        step_no, g_idx, tid, instance = job
        rng = substream(seed, "rollout", step_no, g_idx)
        group = rollout_group(
            policy, params, tasks[tid], train.group_size, rng, instance=instance
        )
        fill_advantages(group)
        train_grad = group_gradient(policy, params, group, ref_params, train)
        probe_grad = subset_gradient(
            group_policy_gradient(policy, params, group), subset_names
        )
        return group, train_grad.values, probe_grad.values

    for step in range(train.total_steps):
        end_step = step
        state = make_state(
            task_ids,
            tracker.norms(task_ids),
            mode=config.sampler.mode,
            temperature=config.sampler.temperature,
            floor=config.sampler.floor,
        )
        probs = state.probs
        srng = substream(seed, "sampler", step)
        if config.sampler.assignment == "per_batch":
            chosen = task_ids[sample_task(probs, srng)]
            step_tasks = [chosen] * n_groups
        else:
            step_tasks = [task_ids[sample_task(probs, srng)] for _ in range(n_groups)]

        # Instance streams advance per task in group order, before fan-out.
        jobs = []
        for g_idx, tid in enumerate(step_tasks):
            count = instance_counters[tid]
            instance_counters[tid] += 1
            instance = sample_instance(
                tasks[tid], substream(seed, "task_data", tid, count)
            )
            jobs.append((step, g_idx, tid, instance))

        try:
            results = _map_ordered(rollout_job, jobs, config.workers)
            acc = np.zeros(policy.param_count)
            for _, train_values, _ in results:
                acc += train_values
            acc /= len(results)
            batch_grad = ParamVector(acc, policy.segments)

            for tid in task_ids:
                probe_values = [
                    results[i][2] for i, t in enumerate(step_tasks) if t == tid
                ]
                if len(probe_values) < 2:
                    continue  # carry the EMA forward
                first, second = split_halves(probe_values)
                g1 = ParamVector(np.mean(first, axis=0), policy.segments)
                g2 = ParamVector(np.mean(second, axis=0), policy.segments)
                tracker.update(tid, cross_product_sqnorm(g1, g2), step)

            params = sgd_step(params, batch_grad, train)
        except NumericError:
            status = "aborted"
            break

        for tid in task_ids:
            task_groups = [results[i][0] for i, t in enumerate(step_tasks) if t == tid]
            if task_groups:
                rewards = np.concatenate([g.rewards for g in task_groups])
                advs = np.concatenate([g.advantages for g in task_groups])
                row = {
                    "reward_mean": float(np.mean(rewards)),
                    "abs_adv_mean": float(np.mean(np.abs(advs))),
                    "response_len": tasks[tid].episode_len,
                    "padding_len": int(
                        round(
                            float(
                                np.mean([g.instance.padding_len for g in task_groups])
                            )
                        )
                    ),
                }
                last_row[tid] = row
                fresh = True
            else:
                row = last_row[tid]
                fresh = False
            record = StepRecord(
                step=step,
                task_id=tid,
                reward_mean=row["reward_mean"],
                abs_adv_mean=row["abs_adv_mean"],
                sq_norm_est=tracker.sq_norm(tid),
                norm_est=tracker.norm(tid),
                sampler_prob=float(probs[task_ids.index(tid)]),
                response_len=row["response_len"],
                padding_len=row["padding_len"],
            )
            records.append(record)
            if fresh:
                fresh_records.append(record)
        end_step = step + 1

    # -- artifacts ----------------------------------------------------------

    rows = "\n".join(r.csv_row() for r in records)
    from gradlens.metrics import CSV_HEADER

    _atomic_write_text(
        os.path.join(out, RECORDS_FILE), CSV_HEADER + "\n" + rows + ("\n" if rows else "")
    )
    files[RECORDS_FILE] = ""

    gains = []
    for tid in task_ids:
        try:
            gains.append(
                gain_report(
                    fresh_records, tid, config.metrics.gain_window,
                    config.metrics.num_points,
                ).to_dict()
            )
        except BoundsError as exc:
            gains.append({"task_id": tid, "error": str(exc)})
    _atomic_write_text(os.path.join(out, GAINS_FILE), json.dumps(gains, indent=2) + "\n")
    files[GAINS_FILE] = ""

    correlations = correlation_report(fresh_records) if fresh_records else {}
    _atomic_write_text(
        os.path.join(out, CORRELATIONS_FILE), json.dumps(correlations, indent=2) + "\n"
    )
    files[CORRELATIONS_FILE] = ""

    _atomic_write_text(
        os.path.join(out, CONFIG_FILE),
        json.dumps(config.resolved_dict(), indent=2, sort_keys=True) + "\n",
    )
    files[CONFIG_FILE] = ""

    for rel in write_checkpoint(out, "params_final", params):
        files[rel] = ""

    for rel in list(files):
        files[rel] = _sha256(os.path.join(out, rel))

    manifest = RunManifest(
        config_hash=config.config_hash(),
        artifact_version=__version__,
        kernel_backend=kernels.backend_name(),
        start_step=0,
        end_step=end_step,
        status=status,
        files=files,
    )
    _atomic_write_text(
        os.path.join(out, MANIFEST_FILE), json.dumps(manifest.to_dict(), indent=2) + "\n"
    )
    return manifest


# ---------------------------------------------------------------------------
# Sweeps.
# ---------------------------------------------------------------------------


def _final_reward_means(out_dir: str, task_ids: list[str]) -> dict:
    """Mean reward over each task's final 10% of fresh observations."""
    from gradlens.metrics import read_records_csv

    records = read_records_csv(os.path.join(out_dir, RECORDS_FILE))
    means = {}
    for tid in task_ids:
        series = [r.reward_mean for r in records if r.task_id == tid]
        window = max(1, len(series) // 10)
        means[tid] = float(np.mean(series[-window:])) if series else float("nan")
    return means


def sweep(config: ExperimentConfig, grid: dict, out_root: str | None = None) -> dict:
    """One run per grid point (plus a uniform baseline) and a comparison CSV."""
    temperatures = grid.get("temperatures", [])
    include_uniform = grid.get("include_uniform", True)
    variants: list[tuple[str, dict]] = []
    if include_uniform:
        variants.append(("uniform", {"mode": "uniform"}))
    for temp in temperatures:
        variants.append(
            (f"grad_prop_eta{temp:g}", {"mode": "grad_prop", "temperature": temp})
        )
    if not variants:
        raise ConfigError("sweep grid is empty")

    root = out_root or _resolve_out_dir(config, None) + "-sweep"
    os.makedirs(root, exist_ok=True)
    task_ids = [t.id for t in config.tasks]

    entries = []
    for idx, (label, sampler_kwargs) in enumerate(variants):
        sub = dataclasses.replace(
            config,
            sampler=replace(config.sampler, **sampler_kwargs),
            seed=config.seed + idx,
            output_dir=None,
        )
        sub_dir = os.path.join(root, f"{idx:02d}_{label}")
        try:
            manifest = run(sub, out_dir=sub_dir)
            entries.append(
                {
                    "label": label,
                    "dir": sub_dir,
                    "status": manifest.status,
                    "final_rewards": _final_reward_means(sub_dir, task_ids),
                }
            )
        except Exception as exc:  # sweep continues past sub-run failures
            entries.append({"label": label, "dir": sub_dir, "status": f"failed: {exc}"})

    lines = ["run," + ",".join(task_ids) + ",avg"]
    for entry in entries:
        rewards = entry.get("final_rewards")
        if not rewards:
            continue
        values = [rewards[tid] for tid in task_ids]
        avg = float(np.mean(values))
        lines.append(
            entry["label"] + "," + ",".join(repr(v) for v in values) + f",{avg!r}"
        )
    comparison = os.path.join(root, "comparison.csv")
    _atomic_write_text(comparison, "\n".join(lines) + "\n")
    summary = {"root": root, "comparison": comparison, "runs": entries}
    _atomic_write_text(
        os.path.join(root, "sweep.json"), json.dumps(summary, indent=2) + "\n"
    )
    return summary


# ---------------------------------------------------------------------------
# Validation suites (machine-readable pass/fail, failures are entries).
# ---------------------------------------------------------------------------


def _check(name: str, passed: bool, **measured) -> dict:
    entry = {"name": name, "passed": bool(passed)}
    entry.update(measured)
    return entry


def _validate_estimator() -> list[dict]:
    from gradlens.probe import simulate_gaussian_estimators

    rng = substream(2024, "fixture", "estimator")
    result = simulate_gaussian_estimators(
        np.array([3.0, 4.0]), batch_size=8, n_batches=120_000, rng=rng
    )
    cross_err = abs(result["cross_mean"] - result["target_sq_norm"])
    naive_err = abs(result["naive_mean"] - result["target_naive"])
    return [
        _check(
            "cross_product_unbiased",
            cross_err <= 3 * result["cross_se"],
            measured=result["cross_mean"],
            target=result["target_sq_norm"],
            stderr=result["cross_se"],
        ),
        _check(
            "naive_bias_matches_trace_term",
            naive_err <= 3 * result["naive_se"],
            measured=result["naive_mean"],
            target=result["target_naive"],
            stderr=result["naive_se"],
        ),
        _check(
            "measured_bias",
            abs(result["naive_mean"] - result["cross_mean"] - result["bias_term"])
            <= 3 * (result["naive_se"] + result["cross_se"]),
            measured=result["naive_mean"] - result["cross_mean"],
            target=result["bias_term"],
        ),
    ]


def _validate_gradients() -> list[dict]:
    from gradlens.policy import PolicySpec

    checks = []
    for arch, tol in (("linear_softmax", 1e-5), ("mlp1", 1e-4)):
        policy = Policy(PolicySpec(arch, 3, 4, hidden_dim=5, init_seed=11))
        rng = substream(7, "fixture", "gradients", arch)
        worst = 0.0
        for _ in range(100):
            params = ParamVector(
                rng.uniform(-1.0, 1.0, policy.param_count), policy.segments
            )
            context = rng.uniform(-2.0, 2.0, 3)
            action = int(rng.integers(0, 4))
            analytic = policy.grad_log_prob(params, context, action)
            fd = policy.finite_diff_grad(params, context, action, 1e-5)
            denom = max(fd.norm(), 1e-12)
            worst = max(
                worst, float(np.linalg.norm(analytic.values - fd.values)) / denom
            )
        checks.append(
            _check(f"fd_match_{arch}", worst < tol, measured=worst, bound=tol)
        )
    policy = Policy(PolicySpec("linear_softmax", 3, 4))
    rng = substream(7, "fixture", "gradients", "score")
    params = ParamVector(rng.uniform(-1, 1, policy.param_count), policy.segments)
    context = rng.uniform(-2, 2, 3)
    probs = policy.action_distribution(params, context)
    expected = sum(
        probs[a] * policy.grad_log_prob(params, context, a).values for a in range(4)
    )
    checks.append(
        _check(
            "expected_score_zero",
            float(np.max(np.abs(expected))) < 1e-10,
            measured=float(np.max(np.abs(expected))),
            bound=1e-10,
        )
    )
    base_logits, _ = policy.forward(params, context)
    p1 = np.exp(kernels.log_softmax(base_logits))
    p2 = np.exp(kernels.log_softmax(base_logits + 5.5))
    checks.append(
        _check(
            "logit_shift_invariance",
            float(np.max(np.abs(p1 - p2))) < 1e-12,
            measured=float(np.max(np.abs(p1 - p2))),
            bound=1e-12,
        )
    )
    return checks


def _validate_convex() -> list[dict]:
    from gradlens.quadratics import QuadraticProblem, ratio

    rng = substream(5, "fixture", "convex")
    violations = 0
    worst_rel = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 6))
        eigs = rng.uniform(0.1, 10.0, dim)
        problem = QuadraticProblem(tuple(eigs), tuple(rng.standard_normal(dim)))
        points = rng.standard_normal((1000, dim)) * 3.0 + np.asarray(problem.optimum)
        for x in points:
            r = ratio(problem, x)
            if not (2 * problem.mu - 1e-9 <= r <= 2 * problem.beta + 1e-9):
                violations += 1
    iso = QuadraticProblem((2.0, 2.0), (0.0, 0.0))
    rng2 = substream(5, "fixture", "convex_iso")
    for _ in range(100):
        x = rng2.standard_normal(2)
        worst_rel = max(worst_rel, abs(ratio(iso, x) - 4.0))
    return [
        _check("ratio_bound_no_violations", violations == 0, violations=violations),
        _check("isotropic_tightness", worst_rel < 1e-12, measured=worst_rel),
    ]


def _validate_sampler() -> list[dict]:
    from gradlens.scheduler import grad_prop_probs, uniform_probs

    checks = []
    probs = grad_prop_probs(np.array([10.0, 1.0, 1.0, 1.0]), 0.01, 0.1)
    checks.append(
        _check(
            "low_temperature_fixture",
            bool(np.allclose(probs, [0.7, 0.1, 0.1, 0.1], atol=1e-9)),
            measured=[float(p) for p in probs],
        )
    )
    checks.append(
        _check(
            "sums_to_one",
            abs(float(probs.sum()) - 1.0) < 1e-12,
            measured=float(probs.sum()),
        )
    )
    hot = grad_prop_probs(np.array([3.0, 1.0, 2.0, 0.5]), 1e6, 0.1)
    checks.append(
        _check(
            "high_temperature_uniform",
            bool(np.allclose(hot, uniform_probs(4), atol=1e-6)),
            measured=[float(p) for p in hot],
        )
    )
    base = grad_prop_probs(np.array([5.0, 2.0, 1.0]), 0.5, 0.1)
    shifted = grad_prop_probs(np.array([5.0, 2.0, 1.0]) + 0.9, 0.5, 0.1)
    checks.append(
        _check(
            "shift_invariance",
            float(np.max(np.abs(base - shifted))) < 1e-12,
            measured=float(np.max(np.abs(base - shifted))),
        )
    )
    floored = grad_prop_probs(np.array([50.0, 1.0, 1.0, 1.0, 1.0]), 0.01, 0.1)
    checks.append(
        _check(
            "floor_respected",
            bool((floored >= 0.1 - 1e-12).all()),
            measured=[float(p) for p in floored],
        )
    )
    return checks


_SUITES = {
    "estimator": _validate_estimator,
    "gradients": _validate_gradients,
    "convex": _validate_convex,
    "sampler": _validate_sampler,
}

VALIDATION_SUITES = tuple(_SUITES)


def validate_suite(name: str) -> dict:
    if name not in _SUITES:
        raise ConfigError(f"unknown suite {name!r}; choose from {VALIDATION_SUITES}")
    kernels.warmup()
    checks = _SUITES[name]()
    return {
        "suite": name,
        "passed": all(c["passed"] for c in checks),
        "checks": checks,
    }


# ---------------------------------------------------------------------------
# Export.
# ---------------------------------------------------------------------------


def export_records(run_dir: str, fmt: str) -> str:
    """Serialize a run's StepRecord stream as csv or jsonl text."""
    from gradlens.metrics import CSV_HEADER, read_records_csv

    if fmt not in ("csv", "jsonl"):
        raise ConfigError(f"unknown export format {fmt!r}")
    records = read_records_csv(os.path.join(run_dir, RECORDS_FILE))
    if fmt == "csv":
        body = "\n".join(r.csv_row() for r in records)
        return CSV_HEADER + "\n" + body + ("\n" if body else "")
    lines = [json.dumps(dataclasses.asdict(r), sort_keys=True) for r in records]
    return "\n".join(lines) + ("\n" if lines else "")
