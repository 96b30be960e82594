"""One agent, its job store and pipeline, wired for scheduled execution."""

from __future__ import annotations

import asyncio
import logging
from typing import Callable, Dict, Optional, Set

from .identity import (
    AgentState,
    IdentityHash,
    SemVer,
    deregister_capability,
    register_capability,
    set_persona,
    set_policy_documents,
)
from .metrics import ExecutionStore, store_provider
from .pipeline import (
    DEFAULT_SOAK_TICKS,
    DEFAULT_THRESHOLD,
    DEFAULT_TICK_INTERVAL,
    EvolutionJob,
    JobStatus,
    JobStore,
    Pipeline,
    PipelineHooks,
)

log = logging.getLogger(__name__)

HooksFactory = Callable[[EvolutionJob], PipelineHooks]


class Engine:
    """Schedules canary jobs on the running event loop.

    Re-key operations take the same lock as pipeline transitions, so a
    manifest change can never interleave with a transition's write set.
    """

    def __init__(
        self,
        state: Optional[AgentState] = None,
        *,
        store: Optional[JobStore] = None,
        hooks_factory: Optional[HooksFactory] = None,
        execution_store: Optional[ExecutionStore] = None,
        soak_ticks: int = DEFAULT_SOAK_TICKS,
        tick_interval: float = DEFAULT_TICK_INTERVAL,
        threshold: int = DEFAULT_THRESHOLD,
        rollback_guard: bool = True,
    ) -> None:
        self.state = state or AgentState.create(["grasp", "place"])
        self.store = store or JobStore()
        self.store.recover_after_restart(self.state)
        self.pipeline = Pipeline(self.state, self.store, rollback_guard=rollback_guard)
        self.execution_store = execution_store or ExecutionStore()
        self.hooks_factory = hooks_factory or self._default_hooks
        self.soak_ticks = soak_ticks
        self.tick_interval = tick_interval
        self.threshold = threshold
        self._tasks: Dict[str, asyncio.Task] = {}
        self._done: Set[str] = set()

    def _default_hooks(self, job: EvolutionJob) -> PipelineHooks:
        return PipelineHooks(metrics_provider=store_provider(self.execution_store))

    @property
    def lock(self):
        return self.store.lock

    def identity(self) -> IdentityHash:
        return self.state.identity()

    async def submit(
        self,
        name: str,
        version: "SemVer | str",
        soak_ticks: Optional[int] = None,
        tick_interval: Optional[float] = None,
        threshold: Optional[int] = None,
    ) -> EvolutionJob:
        """Admit and schedule an upgrade; raises on unknown name or conflict."""
        job = self.store.submit_upgrade(
            self.state,
            name,
            version,
            soak_ticks=self.soak_ticks if soak_ticks is None else soak_ticks,
            threshold=self.threshold if threshold is None else threshold,
            tick_interval=self.tick_interval if tick_interval is None else tick_interval,
        )
        hooks = self.hooks_factory(job)
        task = asyncio.get_running_loop().create_task(self.pipeline.drive(job, hooks))
        self._tasks[job.job_id] = task
        task.add_done_callback(lambda _t, jid=job.job_id: self._tasks.pop(jid, None))
        return job

    async def wait(self, job_id: str) -> JobStatus:
        task = self._tasks.get(job_id)
        if task is not None:
            await task
        return self.store.get(job_id).status

    async def wait_all(self) -> None:
        while self._tasks:
            await asyncio.gather(*list(self._tasks.values()), return_exceptions=True)

    def job(self, job_id: str) -> EvolutionJob:
        return self.store.get(job_id)

    def abort(self, job_id: str) -> JobStatus:
        return self.pipeline.abort_job(job_id)

    def install(self, name: str, version: "SemVer | str") -> IdentityHash:
        with self.lock:
            register_capability(self.state, name, version)
            return self.state.identity()

    def uninstall(self, name: str) -> IdentityHash:
        with self.lock:
            deregister_capability(self.state, name, job_store=self.store)
            return self.state.identity()

    def set_persona(self, persona: str, *, acknowledge_rekey: bool = False) -> IdentityHash:
        with self.lock:
            set_persona(self.state, persona, acknowledge_rekey=acknowledge_rekey)
            return self.state.identity()

    def set_policies(self, env_doc: Optional[str] = None, runtime_doc: Optional[str] = None) -> IdentityHash:
        with self.lock:
            set_policy_documents(self.state, env_doc, runtime_doc)
            return self.state.identity()

    def snapshot(self) -> dict:
        with self.lock:
            return {
                "identity_hash_hex": self.state.identity().hex,
                "manifest_fields": self.state.manifest.as_json(),
                "names": self.state.sorted_names(),
                "active_versions": self.state.active.snapshot(),
                "provisional_versions": self.state.provisional.snapshot(),
                "strawman": self.state.strawman_flag,
            }
