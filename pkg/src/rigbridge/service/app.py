"""FastAPI application wrapping the operations layer.

Domain errors map onto HTTP statuses: validation problems become 422,
unknown rigs/topologies 404-ish validation responses, numeric failures 500
with the exception name in the body.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..errors import NumericError, RigBridgeError, ValidationError
from . import handlers as H
from . import schemas as S


def create_app(workspace: H.RigWorkspace | None = None) -> FastAPI:
    ws = workspace or H.RigWorkspace()
    app = FastAPI(title="rigbridge", version=H.__version__)
    app.state.workspace = ws

    @app.exception_handler(RigBridgeError)
    async def _rig_error(request: Request, exc: RigBridgeError):
        status = 422 if isinstance(exc, ValidationError) else 500
        if isinstance(exc, NumericError):
            status = 500
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.get("/health", response_model=S.HealthResponse)
    def health():
        return H.health()

    @app.post("/rigs/synth", response_model=S.RigSummary)
    def synth_rig(req: S.SynthRigRequest):
        return H.synth_rig(ws, req)

    @app.post("/rigs/load", response_model=S.RigSummary)
    def load_rig(req: S.LoadRigRequest):
        return H.load(ws, req)

    @app.get("/rigs", response_model=list[S.RigSummary])
    def list_rigs():
        return H.list_rigs(ws)

    @app.get("/rigs/{rig_id}", response_model=S.RigSummary)
    def get_rig(rig_id: str):
        entry = ws.get(rig_id)
        return H._summary(rig_id, entry.rig)

    @app.post("/rigs/{rig_id}/fit-skeleton", response_model=S.FitSkeletonResponse)
    def fit_skeleton(rig_id: str, req: S.FitSkeletonRequest):
        return H.fit_skeleton_op(ws, rig_id, req)

    @app.post("/rigs/{rig_id}/pose", response_model=S.PoseResponse)
    def pose(rig_id: str, req: S.PoseRequest):
        return H.pose_op(ws, rig_id, req)

    @app.post("/rigs/{rig_id}/transfer", response_model=S.TransferResponse)
    def transfer(rig_id: str, req: S.TransferRequest):
        return H.transfer_op(ws, rig_id, req)

    @app.post("/rigs/{rig_id}/precompute", response_model=S.PrecomputeResponse)
    def precompute(rig_id: str, req: S.PrecomputeRequest):
        return H.precompute_op(ws, rig_id, req)

    @app.post("/rigs/{rig_id}/invert", response_model=S.InvertResponse)
    def invert(rig_id: str, req: S.InvertRequest):
        return H.invert_op(ws, rig_id, req)

    @app.post("/rigs/{rig_id}/bench", response_model=S.BenchResponse)
    def bench(rig_id: str, req: S.BenchRequest):
        return H.bench_op(ws, rig_id, req)

    @app.post("/metrics/vertex-error", response_model=S.VertexErrorResponse)
    def vertex_error(req: S.VertexErrorRequest):
        return H.vertex_error_op(req)

    return app
