"""HTTP control surface so external canary controllers can drive the engine."""

from __future__ import annotations

from typing import Any, Dict, List, Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .engine import Engine
from .identity import (
    ActiveJobConflict,
    DuplicateNameError,
    IdentityError,
    InvalidNameError,
    InvalidVersionError,
    RekeyNotAcknowledged,
    SemVer,
    UnknownNameError,
)
from .pipeline import UnknownJob, UpgradeConflict

JOB_PATH = "/api/evolution/job/{job_id}"


class UpgradeRequest(BaseModel):
    capability: str
    version: str
    soak_ticks: Optional[int] = Field(default=None, ge=1)
    tick_interval_ms: Optional[float] = Field(default=None, ge=0)
    soak_seconds: Optional[float] = Field(default=None, ge=0)
    metrics_threshold: Optional[int] = Field(default=None, ge=0)


class InstallRequest(BaseModel):
    name: str
    version: str = "v1.0.0"


class PersonaRequest(BaseModel):
    persona: str
    acknowledge_rekey: bool = False


class PolicyRequest(BaseModel):
    env_policy: Optional[str] = None
    runtime_policy: Optional[str] = None


class JobView(BaseModel):
    job_id: str
    capability: str
    target_version: str
    prior_version: str
    status: str
    identity_hash_hex: Optional[str]
    transition_log: List[Dict[str, Any]]
    failure_reason: Optional[str]


def _error(status: int, detail: str, headers: Optional[Dict[str, str]] = None) -> JSONResponse:
    return JSONResponse({"detail": detail}, status_code=status, headers=headers)


def create_app(engine: Optional[Engine] = None) -> FastAPI:
    engine = engine or Engine()
    app = FastAPI(title="canary-identity")
    app.state.engine = engine

    @app.post("/api/evolution/upgrade", status_code=202)
    async def upgrade(req: UpgradeRequest):
        try:
            version = SemVer.parse(req.version)
        except InvalidVersionError as exc:
            return _error(422, str(exc))
        soak_ticks = req.soak_ticks or engine.soak_ticks
        tick_interval = None
        if req.tick_interval_ms is not None:
            tick_interval = req.tick_interval_ms / 1000.0
        elif req.soak_seconds is not None:
            tick_interval = req.soak_seconds / soak_ticks
        try:
            job = await engine.submit(
                req.capability, version, soak_ticks, tick_interval, req.metrics_threshold
            )
        except UpgradeConflict as exc:
            return _error(409, str(exc), {"Location": JOB_PATH.format(job_id=exc.job_id)})
        except (UnknownNameError, InvalidNameError) as exc:
            return _error(422, str(exc))
        poll = JOB_PATH.format(job_id=job.job_id)
        return JSONResponse(
            {"job_id": job.job_id, "poll_url": poll, "status": job.status.value},
            status_code=202,
            headers={"Location": poll},
        )

    @app.get(JOB_PATH, response_model=JobView)
    async def get_job(job_id: str):
        try:
            return engine.job(job_id).to_json()
        except UnknownJob as exc:
            return _error(404, str(exc))

    @app.post(JOB_PATH + "/abort", response_model=JobView)
    async def abort_job(job_id: str):
        try:
            engine.abort(job_id)
            return engine.job(job_id).to_json()
        except UnknownJob as exc:
            return _error(404, str(exc))

    @app.post("/api/agent/install")
    async def install(req: InstallRequest):
        try:
            identity = engine.install(req.name, req.version)
        except DuplicateNameError as exc:
            return _error(409, str(exc))
        except (InvalidNameError, InvalidVersionError) as exc:
            return _error(422, str(exc))
        return {"identity_hash_hex": identity.hex}

    @app.delete("/api/agent/capabilities/{name}")
    async def uninstall(name: str):
        try:
            identity = engine.uninstall(name)
        except UnknownNameError as exc:
            return _error(404, str(exc))
        except ActiveJobConflict as exc:
            return _error(409, str(exc), {"Location": JOB_PATH.format(job_id=exc.job_id)})
        return {"identity_hash_hex": identity.hex}

    @app.post("/api/agent/persona")
    async def persona(req: PersonaRequest):
        try:
            identity = engine.set_persona(req.persona, acknowledge_rekey=req.acknowledge_rekey)
        except RekeyNotAcknowledged as exc:
            return _error(428, str(exc))
        return {"identity_hash_hex": identity.hex}

    @app.put("/api/agent/policies")
    async def policies(req: PolicyRequest):
        try:
            identity = engine.set_policies(req.env_policy, req.runtime_policy)
        except IdentityError as exc:
            return _error(422, str(exc))
        return {"identity_hash_hex": identity.hex}

    @app.get("/api/agent/identity")
    async def identity():
        return engine.snapshot()

    return app
