"""FastAPI application exposing the run store over HTTP."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import SCHEMA_VERSION, __version__
from ..boxes import Box
from ..cart import misclassification, n_leaves
from ..metamodel import predict
from .runs import IllegalTransition, InvalidRequest, Run, RunNotFound, RunStore, auto_index
from .schemas import (AdaptiveStepBody, AdaptiveStepResponse, CoverResponse, CreateRun, PointsResponse, Report,
                      RunCreated, RunSummary, SelectBody, SelectResponse, TrajectoryResponse)

__all__ = ["create_app"]


def _error(status: int, detail) -> JSONResponse:
    return JSONResponse(status_code=status, content={"schema_version": SCHEMA_VERSION, "detail": detail})


def _projection(run: Run, projection: str | None) -> list[str]:
    names = run.names
    if projection is None or projection.strip() == "":
        return names[:2]
    dims = [p.strip() for p in projection.split(",") if p.strip()]
    if not 1 <= len(dims) <= 2:
        raise InvalidRequest("projection must name one or two dimensions")
    unknown = [d for d in dims if d not in names]
    if unknown:
        raise InvalidRequest(f"unknown projection dims {unknown}; have {names}")
    return dims


def _columns(run: Run, pts: np.ndarray, dims: list[str]) -> dict[str, list]:
    return {d: pts[:, run.experiment.space.index(d)].tolist() for d in dims}


def _prim_trajectory(run: Run, box_round: int | None):
    r = len(run.rounds) - 1 if box_round is None else box_round
    if not 0 <= r < len(run.rounds):
        raise RunNotFound(f"run {run.run_id} has no round {box_round}")
    return r, run.rounds[r]


def _adaptive_trajectory(run: Run, box_round: int | None):
    state = run.adaptive
    if state.done:
        final = state.final_boxes or []
        r = 0 if box_round is None else box_round
        if not 0 <= r < len(final):
            raise RunNotFound(f"run {run.run_id} has no final covering round {box_round}")
        return r, final[r].trajectory
    if box_round is not None and box_round != state.iteration:
        raise RunNotFound(f"only the current iteration ({state.iteration}) has a live trajectory")
    return state.iteration, state.prepare()


def create_app(data_dir: str | Path | None = None, ui_dir: str | Path | None = None) -> FastAPI:
    data_dir = data_dir or os.environ.get("SDFORGE_DATA_DIR", "runs")
    store = RunStore(data_dir)
    app = FastAPI(title="sdforge run service", version=__version__)
    app.state.store = store

    @app.exception_handler(RunNotFound)
    async def _not_found(request: Request, exc: RunNotFound):
        return _error(404, f"not found: {exc}")

    @app.exception_handler(IllegalTransition)
    async def _conflict(request: Request, exc: IllegalTransition):
        return _error(409, str(exc))

    @app.exception_handler(InvalidRequest)
    async def _invalid(request: Request, exc: InvalidRequest):
        return _error(422, str(exc))

    @app.exception_handler(RequestValidationError)
    async def _validation(request: Request, exc: RequestValidationError):
        return _error(422, jsonable_errors(exc))

    @app.exception_handler(Exception)
    async def _internal(request: Request, exc: Exception):
        return _error(500, f"{type(exc).__name__}: {exc}")

    @app.get("/health")
    def health():
        return {"schema_version": SCHEMA_VERSION, "status": "ok", "version": __version__}

    @app.post("/runs", status_code=201, response_model=RunCreated)
    def create_run(body: CreateRun):
        run = store.create(body.experiment, body.kind, body.params.model_dump())
        return RunCreated(run_id=run.run_id, kind=run.kind, state=run.state)

    @app.get("/runs/{run_id}", response_model=RunSummary)
    def get_run(run_id: str):
        run = store.get(run_id)
        with run.lock:
            return run.summary()

    @app.get("/runs/{run_id}/trajectory", response_model=TrajectoryResponse)
    def get_trajectory(run_id: str, box_round: int | None = Query(None, ge=0)):
        run = store.get(run_id)
        with run.lock:
            if run.kind == "cart":
                raise IllegalTransition("cart runs have no peeling trajectory")
            if run.kind == "prim":
                r, traj = _prim_trajectory(run, box_round)
                data = run.samples.subset(run.residual_mask(r))
                selected = traj.selected_index
            else:
                r, traj = _adaptive_trajectory(run, box_round)
                data = None
                selected = traj.selected_index if run.adaptive.done else run.pending_selection
            from ..prim import trajectory_to_dict

            steps = trajectory_to_dict(traj, run.names)["steps"]
            for i, s in enumerate(steps):
                s["index"] = i
            n_points = len(data) if data is not None else run.adaptive.cfg.pool_size
            n_vuln = int(data.labels.sum()) if data is not None else (
                steps[0]["n_vulnerable_inside"] if steps else 0)
            return TrajectoryResponse(run_id=run.run_id, box_round=r, n_points=n_points, n_vulnerable=n_vuln,
                                      selected_index=selected, auto_index=auto_index(traj), steps=steps)

    @app.get("/runs/{run_id}/points", response_model=PointsResponse)
    def get_points(run_id: str, projection: str | None = None, box_round: int | None = Query(None, ge=0),
                   step_index: int | None = Query(None, ge=0)):
        run = store.get(run_id)
        with run.lock:
            dims = _projection(run, projection)
            simulated = None
            if run.kind == "adaptive":
                state = run.adaptive
                pts = state.pool
                labels = run.experiment.rule.apply(predict(state.model, pts).mean)
                ds = state.dataset
                origin = [-1] * state.cfg.n_init + [h["iteration"] for h in state.history for _ in h["kinds"]]
                kinds = ["initial"] * state.cfg.n_init + [k for h in state.history for k in h["kinds"]]
                simulated = {**_columns(run, ds.points, dims), "vulnerable": ds.labels.tolist(),
                             "delta": ds.outputs.tolist(), "iteration": origin, "kind": kinds}
            else:
                pts, labels = run.samples.points, run.samples.labels
            final = run.kind == "cart" or (run.kind == "adaptive" and run.adaptive.done and box_round is None)
            if final:
                # union of the run's final boxes: vulnerable CART leaves or the adaptive covering
                if step_index is not None or (run.kind == "cart" and box_round is not None):
                    raise InvalidRequest("step_index/box_round need a peeling trajectory")
                boxes = [Box.from_dict(b["limits"], run.names) for b in run.boxes]
                inside = np.zeros(len(pts), dtype=bool)
                for b in boxes:
                    inside |= b.contains(pts)
                payload = {**_columns(run, pts, dims), "vulnerable": labels.tolist(), "in_box": inside.tolist()}
                return PointsResponse(run_id=run.run_id, projection=dims, box_round=None, step_index=None,
                                      box_source="vulnerable_leaves" if run.kind == "cart" else "final_boxes",
                                      box=[b.to_dict(run.names) for b in boxes], n_inside=int(inside.sum()),
                                      points=payload, simulated=simulated)
            if run.kind == "prim":
                r, traj = _prim_trajectory(run, box_round)
                residual = run.residual_mask(r)
            else:
                r, traj = _adaptive_trajectory(run, box_round)
                residual = np.ones(len(pts), dtype=bool)
            if step_index is not None:
                if step_index >= len(traj):
                    raise InvalidRequest(f"step_index {step_index} out of range [0, {len(traj) - 1}]")
                idx, source = step_index, "preview"
            else:
                chosen = traj.selected_index if run.kind == "prim" else run.pending_selection
                if chosen is None:
                    idx, source = auto_index(traj), "auto"
                else:
                    idx, source = chosen, "selected"
            box = traj.steps[idx].box
            inside = box.contains(pts) & residual
            payload = {**_columns(run, pts, dims), "vulnerable": labels.tolist(), "in_box": inside.tolist(),
                       "in_residual": residual.tolist()}
            return PointsResponse(run_id=run.run_id, projection=dims, box_round=r, step_index=idx,
                                  box_source=source, box=box.to_dict(run.names), n_inside=int(inside.sum()),
                                  points=payload, simulated=simulated)

    @app.post("/runs/{run_id}/select", response_model=SelectResponse)
    def select(run_id: str, body: SelectBody):
        run = store.get(run_id)
        out = store.select(run, body.step_index)
        return SelectResponse(run_id=run.run_id, state=run.state, **out)

    @app.post("/runs/{run_id}/cover-next", response_model=CoverResponse)
    def cover_next(run_id: str):
        run = store.get(run_id)
        out = store.cover_next(run)
        return CoverResponse(run_id=run.run_id, state=run.state, **out)

    @app.post("/runs/{run_id}/adaptive-step", response_model=AdaptiveStepResponse)
    def adaptive_step(run_id: str, body: AdaptiveStepBody | None = None):
        run = store.get(run_id)
        out = store.adaptive_step(run, (body or AdaptiveStepBody()).n)
        return AdaptiveStepResponse(run_id=run.run_id, state=run.state, **out)

    @app.get("/runs/{run_id}/report", response_model=Report)
    def report(run_id: str):
        run = store.get(run_id)
        with run.lock:
            return Report(run_id=run.run_id, kind=run.kind, state=run.state, summary=run.summary(),
                          body=_report_body(run))

    ui = Path(ui_dir) if ui_dir else (Path(os.environ["SDFORGE_UI_DIR"]) if "SDFORGE_UI_DIR" in os.environ
                                      else Path(__file__).with_name("static"))
    if (ui / "index.html").is_file():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui), html=True), name="ui")
    return app


def jsonable_errors(exc: RequestValidationError) -> list[dict]:
    out = []
    for e in exc.errors():
        out.append({"loc": [str(x) for x in e.get("loc", ())], "msg": str(e.get("msg")), "type": e.get("type")})
    return out


def _report_body(run: Run) -> dict:
    body: dict = {"boxes": run.boxes}
    if run.kind == "prim":
        body["rounds"] = [
            {"round": i, "trajectory_length": len(t), "selected_index": t.selected_index,
             "auto_index": auto_index(t)}
            for i, t in enumerate(run.rounds)
        ]
        body["cumulative_coverage"] = run.boxes[-1]["cumulative_coverage"] if run.boxes else 0.0
    elif run.kind == "cart":
        body["tree"] = {"leaves": n_leaves(run.tree), "pruned_leaves": n_leaves(run.pruned),
                        "misclassification": misclassification(run.tree),
                        "pruned_misclassification": misclassification(run.pruned)}
    else:
        st = run.adaptive
        body["config"] = st.cfg.to_dict()
        body["sim_calls"] = st.sim_calls
        body["iteration"] = st.iteration
        body["history"] = [{k: h[k] for k in ("iteration", "selected_index", "auto_selected", "fallback",
                                              "kinds", "n_pool_vulnerable", "box")} for h in st.history]
        body["diagnostics"] = run.diagnostics
        body["gp_params"] = st.model.params.to_dict() if st.model is not None else None
    return body
