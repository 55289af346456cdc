"""HTTP/JSON control plane over a live simulation.

The service owns a driver thread that advances the event loop at a
wall-clock pace multiplier. Every mutation (and every read that wants a
consistent snapshot) is enqueued as a command and applied between event
slices, so request handlers never race the simulation; the response
carries the simulated time at which the command took effect.

Observable happenings (allocation transitions, pipeline transitions,
alert firings, annotations) are appended to a sequence-numbered journal
which `GET /events` serves as newline-delimited JSON. A client that
reconnects with `?from=<last seq + 1>` sees no gaps and no duplicates.
"""

from __future__ import annotations

import dataclasses
import json
import queue
import threading
import time
from typing import Callable

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .allocman import (
    AllocationRequest,
    AllocError,
    NotActive,
    NotDrained,
    SystemDrained,
    UnknownSystem,
)
from .cicd import CiCdError, NotVotedPositive, UnknownPipeline
from .monitor import MonitorError, SystemNotFree
from .sim import Simulation
from .tsstore import StoreError


class ServiceStopped(Exception):
    pass


_STATUS = {
    UnknownSystem: 404,
    UnknownPipeline: 404,
    NotActive: 409,
    NotDrained: 409,
    SystemDrained: 409,
    NotVotedPositive: 409,
    SystemNotFree: 409,
}


def _http_error(exc: Exception) -> HTTPException:
    status = _STATUS.get(type(exc), 400 if isinstance(exc, (StoreError, ValueError)) else 409)
    return HTTPException(
        status_code=status,
        detail={"error": type(exc).__name__, "detail": str(exc)},
    )


class SimulationService:
    """Drives one Simulation and serializes all access to it.

    `pace` is simulated seconds per wall second. With the driver thread
    running, `call()` blocks until the command has been applied at an
    event boundary; without it (unit tests), commands apply inline.
    """

    def __init__(self, sim: Simulation, pace: float = 60.0, slice_s: float = 0.05):
        if pace <= 0:
            raise ValueError("pace must be > 0")
        self.sim = sim
        self.pace = pace
        self.slice_s = slice_s
        self.journal: list[dict] = []
        self.finished = False
        self._cmds: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._cond = threading.Condition()
        self._seen = {"alloc": 0, "cicd": 0, "alerts": 0, "annotations": 0}
        self._prepared = False

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> None:
        self._prepare()
        self._thread = threading.Thread(target=self._drive, name="sim-driver", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=10.0)
        with self._cond:
            self._cond.notify_all()

    def _prepare(self) -> None:
        if not self._prepared:
            self.sim.prepare()
            self._prepared = True
            self._publish()

    # -- command plane ------------------------------------------------------------

    def call(self, fn: Callable):
        """Run fn at the next event boundary; return (result, applied sim time)."""
        if self._thread is None or not self._thread.is_alive():
            self._prepare()
            result = fn()
            self._publish()
            return result, self.sim.loop.now
        if self._stop.is_set():
            raise ServiceStopped()
        box: dict = {}
        done = threading.Event()
        self._cmds.put((fn, box, done))
        done.wait()
        if "error" in box:
            raise box["error"]
        return box["result"], box["t"]

    def _apply_commands(self) -> None:
        while True:
            try:
                fn, box, done = self._cmds.get_nowait()
            except queue.Empty:
                return
            try:
                box["result"] = fn()
            except Exception as exc:  # handed back to the calling thread
                box["error"] = exc
            box["t"] = self.sim.loop.now
            self._publish()
            done.set()

    def _drive(self) -> None:
        loop = self.sim.loop
        duration = self.sim.scenario.duration_s
        wall0 = time.perf_counter()
        sim0 = loop.now
        while not self._stop.is_set():
            self._apply_commands()
            target = min(sim0 + (time.perf_counter() - wall0) * self.pace, duration)
            if loop.now >= duration and not self.finished:
                self.sim.finalize()
                self._publish()
                with self._cond:
                    self.finished = True
                    self.journal.append(
                        {"seq": len(self.journal) + 1, "t": duration, "kind": "run_end"}
                    )
                    self._cond.notify_all()
            if loop.now >= target:
                time.sleep(0.002)
                continue
            loop.run_until(min(target, loop.now + self.pace * self.slice_s))
            self._publish()
        self._apply_commands()

    # -- journal -----------------------------------------------------------------

    def _publish(self) -> None:
        sim = self.sim
        batch: list[dict] = []
        log = sim.alloc.log
        for rec in log[self._seen["alloc"]:]:
            state = None
            if rec["system"]:
                slot = sim.alloc.slots[rec["system"]]
                state = slot.op.value
            batch.append(
                {
                    "t": rec["t"],
                    "kind": "allocation",
                    "op": rec["op"],
                    "allocation": rec["alloc_id"] or None,
                    "user": rec["user"] or None,
                    "node": rec["node"] or None,
                    "system": rec["system"] or None,
                    "system_state": state,
                    "generation": rec["generation"],
                }
            )
        self._seen["alloc"] = len(log)
        log = sim.cicd.log
        for rec in log[self._seen["cicd"]:]:
            batch.append(
                {
                    "t": rec["t"],
                    "kind": "pipeline",
                    "pipeline": rec["pipeline"],
                    "transition": rec["transition"],
                    "job": rec["job"],
                    "outcome": rec["outcome"],
                }
            )
        self._seen["cicd"] = len(log)
        if sim.monitor is not None:
            alerts = sim.monitor.alerts
            for ev in alerts[self._seen["alerts"]:]:
                batch.append(
                    {
                        "t": ev.t,
                        "kind": "alert",
                        "rule": ev.rule,
                        "system": ev.system,
                        "transition": ev.transition,
                        "severity": ev.severity,
                        "value": ev.value,
                    }
                )
            self._seen["alerts"] = len(alerts)
            anns = sim.monitor.annotations
            if len(anns) > self._seen["annotations"]:
                new = list(anns.values())[self._seen["annotations"]:]
                for ann in new:
                    rec = dataclasses.asdict(ann)
                    rec["kind"] = "annotation"
                    rec["t"] = ann.t_start
                    batch.append(rec)
                self._seen["annotations"] = len(anns)
        if not batch:
            return
        batch.sort(key=lambda r: r["t"])
        with self._cond:
            for rec in batch:
                rec["seq"] = len(self.journal) + 1
                self.journal.append(rec)
            self._cond.notify_all()

    def journal_since(self, seq: int) -> list[dict]:
        with self._cond:
            return self.journal[max(seq - 1, 0):]

    def wait_journal(self, seq: int, timeout: float) -> list[dict]:
        """Entries with seq >= `seq`, blocking up to timeout if none yet."""
        with self._cond:
            if len(self.journal) < seq and not self.finished and not self._stop.is_set():
                self._cond.wait(timeout)
            return self.journal[max(seq - 1, 0):]


# -- snapshot builders (run on the event-loop side of the command queue) ------------


def _fleet_snapshot(sim: Simulation) -> dict:
    topo = sim.topo
    firing: dict[str, list[str]] = {}
    probe = {}
    if sim.monitor is not None:
        for ev in sim.monitor.active_alerts():
            firing.setdefault(ev.system, []).append(ev.rule)
        probe = sim.monitor.last_probe
    systems = []
    for sid in sorted(topo.systems):
        sysd = topo.systems[sid]
        slot = sim.alloc.slots[sid]
        alloc = sim.alloc.allocations.get(slot.alloc_id) if slot.alloc_id else None
        last = probe.get(sid)
        systems.append(
            {
                "id": sid,
                "drawer": sysd.drawer,
                "rack": topo.drawers[sysd.drawer].rack,
                "productive": sysd.productive,
                "op_state": slot.op.value,
                "drain_pending": slot.pending_drain,
                "allocation": alloc.id if alloc else None,
                "user": alloc.user if alloc else None,
                "power": {
                    "dc12": sim.fleet.node_powered(sysd.controller),
                    "analog": sim.fleet.analog_powered(sid),
                    "controller": sim.fleet.controller_reporting(sid),
                },
                "fpga_revision": sim.fleet.revision[sid],
                "probe": None
                if last is None
                else {"t": last[0], "ok": last[1], "rtt_s": last[2]},
                "alerts": sorted(firing.get(sid, [])),
            }
        )
    drawers = [
        {
            "id": d.id,
            "rack": d.rack,
            "systems": list(d.systems),
            "dc12": d.id not in sim.fleet.dc12_failed,
        }
        for d in sorted(topo.drawers.values(), key=lambda d: d.id)
    ]
    racks = [
        {"id": r.id, "drawers": list(r.drawers)}
        for r in sorted(topo.racks.values(), key=lambda r: r.id)
    ]
    return {
        "t": sim.loop.now,
        "scenario": sim.scenario.name,
        "stable_revision": sim.fleet.stable_revision,
        "systems": systems,
        "drawers": drawers,
        "racks": racks,
        "queue": [
            {
                "id": a.id,
                "user": a.user,
                "selector": a.selector,
                "t_submit": a.t_submit,
            }
            for a in (sim.alloc.allocations[i] for i in sim.alloc.queue)
        ],
    }


def _parse_key(key: str) -> tuple[str, dict]:
    metric, _, rest = key.partition(",")
    tags = {}
    if rest:
        for part in rest.split(","):
            k, _, v = part.partition("=")
            tags[k] = v
    return metric, tags


def _metrics_payload(
    sim: Simulation, sid: str, series: str, t0: float, t1: float | None, res: float | None
) -> dict:
    if sid not in sim.topo.systems:
        raise UnknownSystem(sid)
    hi = t1 if t1 is not None else sim.loop.now + 1.0
    sets = []
    for key in sim.store.keys():
        metric, tags = _parse_key(key)
        if metric != series or tags.get("system") != sid:
            continue
        if res is None:
            ts, vs = sim.store.read(key, (t0, hi))
            points = [[float(a), float(b)] for a, b in zip(ts, vs)]
        else:
            points = [
                [b.t, b.mean, b.min, b.max, b.count]
                for b in sim.store.query(key, (t0, hi), res)
            ]
        sets.append({"key": key, "tags": tags, "points": points})
    return {"system": sid, "series": series, "from": t0, "to": hi, "res": res, "sets": sets}


# -- request bodies ------------------------------------------------------------------


class AllocationBody(BaseModel):
    user: str
    node: str
    selector: str
    walltime_s: float = Field(gt=0)


class AnnotationBody(BaseModel):
    category: str
    text: str
    t_start: float | None = None
    t_end: float | None = None
    systems: list[str] = []


def create_app(service: SimulationService) -> FastAPI:
    app = FastAPI(title="fleetops control plane", version="1.0")
    sim = service.sim

    def apply(fn):
        try:
            return service.call(fn)
        except (AllocError, CiCdError, MonitorError, StoreError, ValueError) as exc:
            raise _http_error(exc) from exc

    @app.get("/status")
    def status():
        snap, t = apply(lambda: {"t": sim.loop.now, "events": sim.loop.processed})
        return {
            "scenario": sim.scenario.name,
            "seed": sim.seed,
            "pace": service.pace,
            "duration_s": sim.scenario.duration_s,
            "finished": service.finished,
            "seq": len(service.journal),
            **snap,
        }

    @app.get("/fleet")
    def fleet():
        snap, _t = apply(lambda: _fleet_snapshot(sim))
        return snap

    @app.get("/systems/{sid}/metrics")
    def metrics(
        sid: str,
        series: str,
        from_t: float = Query(0.0, alias="from"),
        to_t: float | None = Query(None, alias="to"),
        res: float | None = None,
    ):
        payload, t = apply(lambda: _metrics_payload(sim, sid, series, from_t, to_t, res))
        payload["applied_t"] = t
        return payload

    @app.get("/alerts")
    def alerts(active: bool = False):
        def read():
            if sim.monitor is None:
                return []
            events = sim.monitor.active_alerts() if active else sim.monitor.alerts
            return [dataclasses.asdict(ev) for ev in events]

        out, t = apply(read)
        return {"applied_t": t, "alerts": out}

    @app.get("/annotations")
    def annotations(
        from_t: float | None = Query(None, alias="from"),
        to_t: float | None = Query(None, alias="to"),
    ):
        def read():
            if sim.monitor is None:
                return []
            span = None
            if from_t is not None or to_t is not None:
                span = (from_t or 0.0, to_t if to_t is not None else float("inf"))
            return [dataclasses.asdict(a) for a in sim.monitor.list_annotations(span)]

        out, t = apply(read)
        return {"applied_t": t, "annotations": out}

    @app.post("/annotations", status_code=201)
    def add_annotation(body: AnnotationBody):
        if sim.monitor is None:
            raise HTTPException(409, detail={"error": "MonitoringDisabled"})

        def write():
            t_start = body.t_start if body.t_start is not None else sim.loop.now
            return sim.monitor.add_annotation(
                t_start, body.category, body.text, body.t_end, tuple(body.systems)
            )

        ann, t = apply(write)
        out = dataclasses.asdict(ann)
        out["applied_t"] = t
        return out

    @app.post("/systems/{sid}/drain", status_code=202)
    def drain(sid: str):
        slot, t = apply(lambda: sim.alloc.drain(sid))
        return {
            "system": sid,
            "op_state": slot.op.value,
            "drain_pending": slot.pending_drain,
            "applied_t": t,
        }

    @app.post("/systems/{sid}/undrain")
    def undrain(sid: str):
        slot, t = apply(lambda: sim.alloc.undrain(sid))
        return {
            "system": sid,
            "op_state": slot.op.value,
            "drain_pending": slot.pending_drain,
            "applied_t": t,
        }

    @app.post("/systems/{sid}/health_check")
    def health_check(sid: str):
        if sim.monitor is None:
            raise HTTPException(409, detail={"error": "MonitoringDisabled"})
        check, t = apply(lambda: sim.monitor.trigger_health_check(sid))
        return {
            "t": check.t,
            "system": check.system,
            "ok": check.ok,
            "flags": check.flags,
            "applied_t": t,
        }

    @app.post("/allocations")
    def allocate(body: AllocationBody):
        def write():
            if body.node not in sim.topo.nodes:
                raise HTTPException(404, detail={"error": "UnknownNode", "detail": body.node})
            return sim.alloc.submit_request(
                AllocationRequest(body.user, body.node, body.selector, body.walltime_s)
            )

        alloc, t = apply(write)
        return {
            "id": alloc.id,
            "state": alloc.state.value,
            "system": alloc.system,
            "applied_t": t,
        }

    @app.delete("/allocations/{alloc_id}")
    def cancel(alloc_id: str):
        def write():
            if alloc_id not in sim.alloc.allocations:
                raise HTTPException(
                    404, detail={"error": "UnknownAllocation", "detail": alloc_id}
                )
            return sim.alloc.cancel(alloc_id)

        alloc, t = apply(write)
        return {"id": alloc.id, "state": alloc.state.value, "applied_t": t}

    @app.get("/pipelines")
    def pipelines():
        def read():
            out = []
            for pid in sorted(sim.cicd.pipelines):
                p = sim.cicd.pipelines[pid]
                out.append(
                    {
                        "id": p.id,
                        "kind": p.kind,
                        "revision": p.revision,
                        "state": p.state.value,
                        "vote": p.vote,
                        "approved": p.approved,
                        "artifact": p.artifact,
                        "jobs": [
                            {
                                "name": j.name,
                                "state": j.state.value,
                                "outcome": j.outcome,
                                "t_start": j.t_start,
                                "t_end": j.t_end,
                                "pool": j.pool,
                                "runner": j.runner,
                            }
                            for j in p.job_list()
                        ],
                    }
                )
            return out

        out, t = apply(read)
        return {"applied_t": t, "pipelines": out}

    @app.post("/pipelines/{pid}/approve")
    def approve(pid: str):
        p, t = apply(lambda: sim.cicd.approve(pid))
        return {"id": p.id, "state": p.state.value, "approved": p.approved, "applied_t": t}

    @app.get("/events")
    def events(from_seq: int = Query(1, alias="from"), follow: bool = True):
        def gen():
            next_seq = max(from_seq, 1)
            while True:
                if follow:
                    chunk = service.wait_journal(next_seq, timeout=0.25)
                else:
                    chunk = service.journal_since(next_seq)
                for rec in chunk:
                    yield json.dumps(rec, separators=(",", ":")) + "\n"
                if chunk:
                    next_seq = chunk[-1]["seq"] + 1
                if not follow:
                    return
                if service.finished and next_seq > len(service.journal):
                    return
                if service._stop.is_set():
                    return

        return StreamingResponse(gen(), media_type="application/x-ndjson")

    return app


def serve(sim: Simulation, bind: str = "127.0.0.1:8177", pace: float = 60.0) -> None:
    """Run the control plane until interrupted; blocks the calling thread."""
    import uvicorn

    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind must look like HOST:PORT, got {bind!r}")
    service = SimulationService(sim, pace=pace)
    service.start()
    try:
        uvicorn.run(create_app(service), host=host, port=int(port), log_level="warning")
    finally:
        service.stop()
