"""Gateware and software delivery pipelines.

A bitfile pipeline runs rtl_sim and bitfile_build on the hardened EDA
pool, stages the artifact content-addressed, then hardware-tests it on a
real system borrowed through the allocator. A software pipeline builds
and hardware-tests against the current stable bitfile. Every pipeline
receives exactly one vote: +1 when every required job passed, -1
otherwise. Release needs the +1 and a human approval, in either order,
and then runs a final release build job.

Job durations are the configured base scaled by a factor drawn uniformly
from [0.5, 1.5), keyed by (seed, pipeline, job) so a pipeline's timing
never depends on what else is running.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

from . import rng
from .allocman import (
    ANY_PRODUCTIVE,
    AllocState,
    AllocationManager,
    AllocationRequest,
)
from .devices import DeviceFleet
from .engine import EventLoop

POOL_EDA = "hardened_eda"
POOL_HW = "hardware_test"

POOL_PARALLELISM = 2

# Runner hosts of the hardware test pool; these are the cluster nodes the
# firewall must open toward the borrowed system.
HW_RUNNER_NODES = ("cn24", "cn25")
EDA_RUNNER_NODES = ("eda0", "eda1")

DEFAULT_BASE_S = {
    "rtl_sim": 1800.0,
    "bitfile_build": 7200.0,
    "sw_build": 1200.0,
    "hw_test": 900.0,
    "release": 600.0,
}

JOB_CHAIN = {
    "bitfile": ("rtl_sim", "bitfile_build", "hw_test"),
    "software": ("sw_build", "hw_test"),
}

JOB_POOL = {
    "rtl_sim": POOL_EDA,
    "bitfile_build": POOL_EDA,
    "sw_build": POOL_HW,
    "hw_test": POOL_HW,
    "release": None,  # resolved per pipeline kind
}

HW_TEST_ALLOC_MARGIN_S = 300.0


class CiCdError(Exception):
    pass


class UnknownPipeline(CiCdError):
    pass


class NotVotedPositive(CiCdError):
    """Approval attempted on a pipeline whose vote already came back -1."""


class JobState(str, Enum):
    PENDING = "pending"
    QUEUED = "queued"
    RUNNING = "running"
    PASSED = "passed"
    FAILED = "failed"
    SKIPPED = "skipped"


class PipelineState(str, Enum):
    SUBMITTED = "submitted"
    BUILDING = "building"
    STAGED = "staged"
    HW_TESTING = "hw_testing"
    VOTED = "voted"
    RELEASED = "released"
    FAILED = "failed"


@dataclass
class Job:
    name: str
    pool: str
    base_s: float
    state: JobState = JobState.PENDING
    outcome: str | None = None  # "pass" | "fail" | "checksum_mismatch"
    t_start: float | None = None
    t_end: float | None = None
    runner: str | None = None


@dataclass
class Pipeline:
    id: str
    kind: str  # "bitfile" | "software"
    revision: str
    state: PipelineState = PipelineState.SUBMITTED
    jobs: dict[str, Job] = field(default_factory=dict)
    order: tuple[str, ...] = ()
    vote: int | None = None
    approved: bool = False
    t_submit: float = 0.0
    artifact: str | None = None  # staging digest
    forced: dict[str, bool] = field(default_factory=dict)

    def job_list(self) -> list[Job]:
        return [self.jobs[n] for n in self.order] + (
            [self.jobs["release"]] if "release" in self.jobs else []
        )


class StagingStore:
    """Content-addressed artifact staging keyed by sha256."""

    def __init__(self):
        self.blobs: dict[str, bytes] = {}

    def put(self, content: bytes) -> str:
        digest = hashlib.sha256(content).hexdigest()
        self.blobs[digest] = content
        return digest

    def get(self, digest: str) -> bytes | None:
        return self.blobs.get(digest)

    def verify(self, digest: str) -> bool:
        blob = self.blobs.get(digest)
        if blob is None:
            return False
        return hashlib.sha256(blob).hexdigest() == digest

    def corrupt(self, digest: str) -> None:
        """Flip one byte in place; verification must catch this."""
        blob = self.blobs.get(digest)
        if blob is None:
            raise KeyError(digest)
        flipped = bytes([blob[0] ^ 0xFF]) + blob[1:]
        self.blobs[digest] = flipped


class _Pool:
    def __init__(self, name: str, runners: tuple[str, ...]):
        self.name = name
        self.free = list(runners)
        self.queue: list[tuple[Pipeline, Job]] = []


class CiCd:
    def __init__(
        self,
        loop: EventLoop,
        alloc: AllocationManager,
        fleet: DeviceFleet,
        seed: int,
    ):
        self.loop = loop
        self.alloc = alloc
        self.fleet = fleet
        self.seed = seed
        self.staging = StagingStore()
        self.pipelines: dict[str, Pipeline] = {}
        self.pools = {
            POOL_EDA: _Pool(POOL_EDA, EDA_RUNNER_NODES),
            POOL_HW: _Pool(POOL_HW, HW_RUNNER_NODES),
        }
        self.log: list[dict] = []
        self._seq = 0

    # -- public operations --------------------------------------------------------

    def submit(
        self,
        kind: str,
        revision: str,
        outcomes: dict[str, bool] | None = None,
        base_overrides: dict[str, float] | None = None,
    ) -> Pipeline:
        if kind not in JOB_CHAIN:
            raise CiCdError(f"unknown pipeline kind {kind!r}")
        self._seq += 1
        pid = f"p{self._seq:04d}"
        bases = dict(DEFAULT_BASE_S)
        if base_overrides:
            bases.update(base_overrides)
        order = JOB_CHAIN[kind]
        release_pool = POOL_EDA if kind == "bitfile" else POOL_HW
        p = Pipeline(
            pid,
            kind,
            revision,
            t_submit=self.loop.now,
            forced=dict(outcomes or {}),
            order=order,
        )
        for name in order:
            p.jobs[name] = Job(name, JOB_POOL[name], bases[name])
        p.jobs["release"] = Job("release", release_pool, bases["release"])
        self.pipelines[pid] = p
        self._log(p, "submitted")
        self._enqueue(p, p.jobs[order[0]])
        return p

    def approve(self, pipeline_id: str) -> Pipeline:
        p = self.pipelines.get(pipeline_id)
        if p is None:
            raise UnknownPipeline(pipeline_id)
        if p.vote is not None and p.vote < 0:
            raise NotVotedPositive(pipeline_id)
        if not p.approved:
            p.approved = True
            self._log(p, "approved")
            self._maybe_release(p)
        return p

    # -- scheduling ----------------------------------------------------------------

    def _log(self, p: Pipeline, transition: str, job: Job | None = None) -> None:
        self.log.append(
            {
                "t": self.loop.now,
                "pipeline": p.id,
                "transition": transition,
                "job": job.name if job else None,
                "outcome": job.outcome if job else None,
                "pool": job.pool if job else None,
            }
        )

    def _duration(self, p: Pipeline, job: Job) -> float:
        return job.base_s * rng.uniform(0.5, 1.5, self.seed, "cicd", p.id, job.name)

    def _enqueue(self, p: Pipeline, job: Job) -> None:
        job.state = JobState.QUEUED
        pool = self.pools[job.pool]
        pool.queue.append((p, job))
        self._kick(pool)

    def _kick(self, pool: _Pool) -> None:
        while pool.free and pool.queue:
            p, job = pool.queue.pop(0)
            job.runner = pool.free.pop(0)
            self._job_start(p, job)

    def _release_runner(self, job: Job) -> None:
        pool = self.pools[job.pool]
        pool.free.append(job.runner)
        pool.free.sort()
        job.runner = None
        self._kick(pool)

    def _job_start(self, p: Pipeline, job: Job) -> None:
        job.state = JobState.RUNNING
        job.t_start = self.loop.now
        if p.state is PipelineState.SUBMITTED:
            p.state = PipelineState.BUILDING
            self._log(p, "building")
        self._log(p, "job_start", job)
        if job.name == "hw_test":
            p.state = PipelineState.HW_TESTING
            self._log(p, "hw_testing")
            self._start_hw_test(p, job)
            return
        self.loop.schedule(
            self.loop.now + self._duration(p, job), self._job_end, (p, job)
        )

    def _start_hw_test(self, p: Pipeline, job: Job) -> None:
        if p.kind == "bitfile" and not self.staging.verify(p.artifact):
            job.outcome = "checksum_mismatch"
            self._job_end((p, job))
            return
        req = AllocationRequest(
            "ci",
            job.runner,
            ANY_PRODUCTIVE,
            self._duration(p, job) + HW_TEST_ALLOC_MARGIN_S,
        )
        alloc = self.alloc.submit_request(req)
        if alloc.state is AllocState.ACTIVE:
            self._hw_test_running(p, job, alloc)
        else:
            self.alloc.on_activate[alloc.id] = lambda a, p=p, job=job: (
                self._hw_test_running(p, job, a)
            )

    def _hw_test_running(self, p: Pipeline, job: Job, alloc) -> None:
        if p.kind == "bitfile":
            self.fleet.set_revision(alloc.system, p.revision)
        self.loop.schedule(
            self.loop.now + self._duration(p, job),
            self._hw_test_end,
            (p, job, alloc),
        )

    def _hw_test_end(self, arg) -> None:
        p, job, alloc = arg
        if p.kind == "bitfile":
            self.fleet.set_revision(alloc.system, self.fleet.stable_revision)
        if alloc.state is AllocState.ACTIVE:
            self.alloc.release(alloc.id)
        self._job_end((p, job))

    def _job_end(self, arg) -> None:
        p, job = arg
        if job.outcome is None:
            job.outcome = "pass" if p.forced.get(job.name, True) else "fail"
        passed = job.outcome == "pass"
        job.state = JobState.PASSED if passed else JobState.FAILED
        job.t_end = self.loop.now
        self._log(p, "job_end", job)
        self._release_runner(job)
        if job.name == "release":
            if passed:
                p.state = PipelineState.RELEASED
                self._log(p, "released")
                if p.kind == "bitfile":
                    self.fleet.stable_revision = p.revision
            else:
                p.state = PipelineState.FAILED
                self._log(p, "failed")
            return
        if passed:
            if job.name in ("bitfile_build", "sw_build"):
                content = f"{p.kind}:{p.revision}:{p.id}".encode()
                p.artifact = self.staging.put(content)
                p.state = PipelineState.STAGED
                self._log(p, "staged")
            nxt = self._next_job(p, job)
            if nxt is not None:
                self._enqueue(p, nxt)
            else:
                self._vote(p)
        else:
            for name in p.order:
                j = p.jobs[name]
                if j.state in (JobState.PENDING,):
                    j.state = JobState.SKIPPED
                    self._log(p, "job_skip", j)
            self._vote(p)

    def _next_job(self, p: Pipeline, job: Job) -> Job | None:
        idx = p.order.index(job.name)
        if idx + 1 < len(p.order):
            return p.jobs[p.order[idx + 1]]
        return None

    def _vote(self, p: Pipeline) -> None:
        assert p.vote is None, f"{p.id}: second vote"
        p.vote = 1 if all(p.jobs[n].state is JobState.PASSED for n in p.order) else -1
        p.state = PipelineState.VOTED
        self.log.append(
            {
                "t": self.loop.now,
                "pipeline": p.id,
                "transition": "voted",
                "job": None,
                "outcome": f"{p.vote:+d}",
                "pool": None,
            }
        )
        if p.vote < 0:
            p.state = PipelineState.FAILED
            self._log(p, "failed")
            return
        self._maybe_release(p)

    def _maybe_release(self, p: Pipeline) -> None:
        if p.vote == 1 and p.approved and p.jobs["release"].state is JobState.PENDING:
            self._enqueue(p, p.jobs["release"])
