"""
Simulation Processor
Runs the paths of a scenario on a worker pool and writes the run directory
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import json
import logging
import math
import time

import numpy as np
import pandas as pd

from dampspde import __version__
from dampspde.config import config
from dampspde.core.integrator import (
    IncrementRecord, Scheme, StateField, StepPlan, Trajectory, build_step_plan, integrate
)
from dampspde.database import RunRegistry
from dampspde.exceptions import ArtifactError, ConfigurationError, DampSpdeError
from dampspde.scenario import Scenario, load_scenario, save_scenario

logger = logging.getLogger(__name__)

INCREMENT_FIELDS = ('forcing', 'p', 'q', 'L', 'M')


@dataclass
class RunResult:
    """Metadata of one finished run"""
    digest: str
    out_dir: str
    files: Dict[str, str] = field(default_factory=dict)
    reports: Dict[str, bool] = field(default_factory=dict)
    version: str = __version__
    wall_clock: float = 0.0
    seed: int = 0
    paths: int = 0
    scheme: str = ""

    def to_dict(self) -> Dict:
        return asdict(self)


def merge_trajectories(parts: Sequence[Trajectory]) -> Trajectory:
    """Concatenate batches along the path axis, in the given order"""
    first = parts[0]
    increments = None
    if first.increments is not None:
        increments = IncrementRecord(
            first.dt, **{name: np.concatenate([getattr(p.increments, name) for p in parts], axis=1)
                         for name in INCREMENT_FIELDS}
        )
    return Trajectory(
        trunc=first.trunc, rho=first.rho, dt=first.dt, scheme=first.scheme,
        path_ids=np.concatenate([p.path_ids for p in parts]),
        times=first.times, steps=first.steps,
        u=np.concatenate([p.u for p in parts], axis=1),
        v=np.concatenate([p.v for p in parts], axis=1),
        initial=StateField(np.concatenate([p.initial.u for p in parts]),
                           np.concatenate([p.initial.v for p in parts]), first.initial.t),
        increments=increments,
    )


def state_norms(trunc, u: np.ndarray, v: np.ndarray, deltas: Sequence[float]) -> Dict[str, np.ndarray]:
    """
    Squared norms of (batched) states

    X = E_{1/2} x E_0, and X_delta = E_{1/2 + delta/2} x E_{delta/2}.
    """
    a = trunc.a
    out = {
        'X': np.sum(a * u ** 2 + v ** 2, axis=-1),
        'E_half': np.sum(a * u ** 2, axis=-1),
        'u_L2': np.sum(u ** 2, axis=-1),
        'v_L2': np.sum(v ** 2, axis=-1),
    }
    for delta in deltas:
        out[f'X_{delta:g}'] = np.sum(a ** (1.0 + delta) * u ** 2 + a ** delta * v ** 2, axis=-1)
    return out


class SimulationProcessor:
    """
    Path farm for one scenario

    Paths are split into fixed batches by path index; each batch runs on a
    worker with its own streams and the results are merged in batch order,
    so the output does not depend on the number of threads.
    """

    def __init__(
        self,
        scenario: Scenario,
        out_dir: Optional[Path] = None,
        threads: Optional[int] = None,
        batch_size: Optional[int] = None,
        registry: Optional[RunRegistry] = None
    ):
        self.scenario = scenario
        self.out_dir = Path(out_dir or Path(config.output.directory) / scenario.digest()[:12])
        self.threads = max(1, int(threads or config.simulation.threads))
        self.batch_size = max(1, int(batch_size or config.simulation.batch_size))
        self.registry = registry
        self.trajectory: Optional[Trajectory] = None
        logger.info(f"Simulation processor: {scenario.paths} paths, {self.threads} threads, "
                    f"batches of {self.batch_size}")

    def batches(self) -> List[List[int]]:
        ids = list(range(self.scenario.paths))
        return [ids[i:i + self.batch_size] for i in range(0, len(ids), self.batch_size)]

    def build_plan(self) -> StepPlan:
        s = self.scenario
        plan = build_step_plan(s.truncation(), s.rho, s.dt, s.noise, s.coefficient_set(), s.persist_increments)
        # Build shared grid caches before workers start
        _ = (plan.trunc.transform, plan.trunc.dealiased_transform)
        return plan

    def simulate(self) -> Trajectory:
        """Run every path and return the merged ensemble"""
        report = self.scenario.admissibility()
        if not report.verdict:
            raise ConfigurationError("scenario is inadmissible: " + "; ".join(report.violations))
        plan = self.build_plan()
        s = self.scenario
        initial = s.initial_state(plan.trunc)
        output_steps = s.output_steps()
        batches = self.batches()

        def work(batch: List[int]) -> Trajectory:
            return integrate(plan, initial, s.n_steps, output_steps, s.seed, batch)

        parts: List[Trajectory] = []
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            futures = [pool.submit(work, batch) for batch in batches]
            try:
                for i, future in enumerate(futures):
                    parts.append(future.result())
                    logger.info(f"Batch {i + 1}/{len(batches)} done")
            except DampSpdeError as e:
                logger.error(f"Run aborted: {e}")
                for pending in futures:
                    pending.cancel()
                raise
        self.trajectory = merge_trajectories(parts)
        return self.trajectory

    def run(self) -> RunResult:
        """Simulate and write the run directory"""
        started = time.perf_counter()
        trajectory = self.simulate()
        files = self.write(trajectory)
        result = RunResult(
            digest=self.scenario.digest(),
            out_dir=str(self.out_dir),
            files=files,
            wall_clock=round(time.perf_counter() - started, 3),
            seed=self.scenario.seed,
            paths=self.scenario.paths,
            scheme=trajectory.scheme.value,
        )
        (self.out_dir / 'run.json').write_text(json.dumps(result.to_dict(), indent=2), encoding='utf-8')
        if self.registry is not None:
            self.registry.log_run(result.digest, result.out_dir, result.seed, result.paths,
                                  result.version, result.wall_clock)
        logger.info(f"Run {result.digest[:12]} finished in {result.wall_clock:.1f}s -> {self.out_dir}")
        return result

    # -- single writer ---------------------------------------------------

    def write(self, trajectory: Trajectory) -> Dict[str, str]:
        out = self.out_dir
        out.mkdir(parents=True, exist_ok=True)
        files = {'scenario': str(save_scenario(self.scenario, out / 'scenario.toml'))}
        np.save(out / 'times.npy', trajectory.times)
        np.save(out / 'steps.npy', trajectory.steps)
        np.save(out / 'path_ids.npy', trajectory.path_ids)
        np.save(out / 'snapshots_u.npy', trajectory.u)
        np.save(out / 'snapshots_v.npy', trajectory.v)
        files.update({k: str(out / f'{k}.npy') for k in ('times', 'steps', 'path_ids', 'snapshots_u', 'snapshots_v')})
        if trajectory.increments is not None:
            for name in INCREMENT_FIELDS:
                np.save(out / f'increments_{name}.npy', getattr(trajectory.increments, name))
                files[f'increments_{name}'] = str(out / f'increments_{name}.npy')
        files['trajectories'] = str(self._write_ndjson(trajectory, out / 'trajectories.ndjson'))
        files['moments'] = str(self._write_moments(trajectory, out / 'moments.csv'))
        return files

    def _write_ndjson(self, trajectory: Trajectory, path: Path) -> Path:
        deltas = self.scenario.output.deltas
        raw = self.scenario.output.raw_coefficients
        norms = [state_norms(trajectory.trunc, trajectory.u[i], trajectory.v[i], deltas)
                 for i in range(len(trajectory.times))]
        with open(path, 'w', encoding='utf-8') as f:
            for p, path_id in enumerate(trajectory.path_ids):
                for i, t in enumerate(trajectory.times):
                    n = norms[i]
                    record = {
                        'path_id': int(path_id),
                        't': float(t),
                        'norms': {
                            'X': math.sqrt(float(n['X'][p])),
                            'E_half': math.sqrt(float(n['E_half'][p])),
                            'fractional': [
                                {'delta': float(d), 'value': math.sqrt(float(n[f'X_{d:g}'][p]))} for d in deltas
                            ],
                        },
                    }
                    if raw:
                        record['u'] = trajectory.u[i, p].tolist()
                        record['v'] = trajectory.v[i, p].tolist()
                    f.write(json.dumps(record) + '\n')
        return path

    def _write_moments(self, trajectory: Trajectory, path: Path) -> Path:
        deltas = self.scenario.output.deltas
        rows = []
        for i, t in enumerate(trajectory.times):
            n = state_norms(trajectory.trunc, trajectory.u[i], trajectory.v[i], deltas)
            row = {'t': float(t), 'paths': trajectory.paths}
            for key, values in n.items():
                row[f'mean_{key}_sq'] = math.fsum(values.tolist()) / trajectory.paths
            rows.append(row)
        pd.DataFrame(rows).to_csv(path, index=False, float_format=config.output.float_format)
        return path


def load_run(run_dir: Path) -> Tuple[Scenario, Trajectory]:
    """
    Read a run directory back into a scenario and its ensemble

    Raises:
        ArtifactError: Missing or inconsistent files
    """
    run_dir = Path(run_dir)
    required = ['scenario.toml', 'times.npy', 'steps.npy', 'path_ids.npy', 'snapshots_u.npy', 'snapshots_v.npy']
    missing = [name for name in required if not (run_dir / name).exists()]
    if missing:
        raise ArtifactError(f"run directory {run_dir} lacks {', '.join(missing)}")
    scenario = load_scenario(run_dir / 'scenario.toml')
    trunc = scenario.truncation()
    u = np.load(run_dir / 'snapshots_u.npy')
    v = np.load(run_dir / 'snapshots_v.npy')
    if u.shape[-1] != trunc.size:
        raise ArtifactError(f"snapshots hold {u.shape[-1]} modes, scenario has {trunc.size}")
    increments = None
    if all((run_dir / f'increments_{name}.npy').exists() for name in INCREMENT_FIELDS):
        increments = IncrementRecord(
            scenario.dt, **{name: np.load(run_dir / f'increments_{name}.npy') for name in INCREMENT_FIELDS}
        )
    path_ids = np.load(run_dir / 'path_ids.npy')
    initial = scenario.initial_state(trunc).broadcast(len(path_ids))
    scheme = Scheme.EXACT_LINEAR_ADDITIVE if scenario.coefficient_set().linear_additive \
        else Scheme.EXPONENTIAL_EULER
    trajectory = Trajectory(
        trunc=trunc, rho=scenario.rho, dt=scenario.dt, scheme=scheme, path_ids=path_ids,
        times=np.load(run_dir / 'times.npy'), steps=np.load(run_dir / 'steps.npy'),
        u=u, v=v, initial=initial, increments=increments,
    )
    logger.info(f"Loaded run {run_dir}: {len(path_ids)} paths, {len(trajectory.times)} snapshots")
    return scenario, trajectory
