"""
Servidor local FastAPI del laboratorio TSP.
Expone el gadget, las cotas Held-Karp / Comb_c y el branch and bound.
"""

from contextlib import asynccontextmanager
from typing import Any, Optional

import uvicorn
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from app.bnb import BoundSpec, branch_and_bound, verify_certificate
from app.combs import comb_lp, separate_combs
from app.config import DP_MAX_N, HOST, PORT, RELOAD, logger
from app.errors import InvalidArgumentError, InvariantError, LabError
from app.gadget_solution import build_gadget_solution, local_lengths, verify_gadget_lemmas
from app.instance import PointSet, build_gadget, generate_uniform
from app.lp_core import EdgeFixings, held_karp

MAX_API_POINTS = 60


# --- Modelos de request/response ---
class InstanceRequest(BaseModel):
    """Puntos explicitos o una instancia uniforme sembrada."""

    points: Optional[list[list[float]]] = None
    n: Optional[int] = Field(default=None, ge=3, le=MAX_API_POINTS)
    d: int = Field(default=2, ge=2)
    seed: int = 0

    def to_point_set(self) -> PointSet:
        if self.points is not None:
            if len(self.points) > MAX_API_POINTS:
                raise InvalidArgumentError(f"Maximo {MAX_API_POINTS} puntos por request.")
            return PointSet(self.points)
        if self.n is None:
            raise InvalidArgumentError("Indica points o n.")
        return generate_uniform(self.n, self.d, self.seed)


class HeldKarpRequest(InstanceRequest):
    include: list[tuple[int, int]] = Field(default_factory=list)
    exclude: list[tuple[int, int]] = Field(default_factory=list)


class BoundResponse(BaseModel):
    status: str
    value: Optional[float]
    cuts_added: int
    iterations: int
    support: list[tuple[int, int, float]]


class CombRequest(InstanceRequest):
    c: int = Field(default=6, ge=2)


class CombResponse(BaseModel):
    hk: float
    comb: float
    violated_at_hk: Optional[dict[str, Any]] = None


class GadgetRequest(BaseModel):
    k: int = Field(default=16, ge=4, le=40)
    c: int = Field(default=6, ge=2)
    entry_mode: int = Field(default=1, ge=1, le=2)
    strict: bool = True
    verify: bool = False


class GadgetResponse(BaseModel):
    gap: dict[str, Any]
    solution: dict[str, Any]
    lemmas: Optional[dict[str, Any]] = None


class BnBRequest(InstanceRequest):
    bound: str = Field(default="hk", pattern="^(hk|comb)$")
    c: int = Field(default=6, ge=6)


class BnBResponse(BaseModel):
    length: float
    order: list[int]
    stats: dict[str, Any]


class HealthResponse(BaseModel):
    """Modelo de response para el endpoint /health."""

    status: str
    dp_max_n: int


def _bad_request(exc: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


# --- Lifespan (startup/shutdown) ---
@asynccontextmanager
async def lifespan(app: FastAPI):
    """Manejo de inicio y cierre del servidor."""
    logger.info("Iniciando servidor del laboratorio TSP...")
    try:
        yield
    finally:
        logger.info("Servidor detenido")


# --- Aplicacion FastAPI ---
app = FastAPI(
    title="Laboratorio TSP",
    description="Cotas Held-Karp, desigualdades de peine y branch and bound",
    version="1.0.0",
    lifespan=lifespan,
)


# --- Endpoints ---
@app.get("/health", response_model=HealthResponse)
async def health() -> HealthResponse:
    """Verifica el estado del servidor."""
    return HealthResponse(status="ok", dp_max_n=DP_MAX_N)


@app.post("/gadget", response_model=GadgetResponse)
def gadget(request: GadgetRequest) -> GadgetResponse:
    try:
        _, meta = build_gadget(request.k)
        sol = build_gadget_solution(meta, request.c, request.entry_mode, strict=request.strict)
        report = local_lengths(meta, sol)
        lemmas = verify_gadget_lemmas(sol, request.c).to_dict() if request.verify else None
    except InvalidArgumentError as exc:
        raise _bad_request(exc) from exc
    return GadgetResponse(gap=report.to_dict(), solution=sol.to_dict(), lemmas=lemmas)


@app.post("/held-karp", response_model=BoundResponse)
def held_karp_bound(request: HeldKarpRequest) -> BoundResponse:
    try:
        X = request.to_point_set()
        result = held_karp(X, EdgeFixings.of(request.include, request.exclude))
    except (InvalidArgumentError, ValueError) as exc:
        raise _bad_request(exc) from exc
    support = (
        [(i, j, w) for (i, j), w in sorted(result.solution.support().items())] if result.solution is not None else []
    )
    return BoundResponse(
        status=result.status.value,
        value=result.value if result.optimal else None,
        cuts_added=result.cuts_added,
        iterations=result.iterations,
        support=support,
    )


@app.post("/combs/separate", response_model=CombResponse)
def combs_separate(request: CombRequest) -> CombResponse:
    try:
        X = request.to_point_set()
        hk = held_karp(X)
        violated = separate_combs(hk.solution, request.c)
        comb = comb_lp(X, request.c)
    except (InvalidArgumentError, ValueError) as exc:
        raise _bad_request(exc) from exc
    return CombResponse(
        hk=hk.value,
        comb=comb.value,
        violated_at_hk=violated.to_dict() if violated is not None else None,
    )


@app.post("/bnb", response_model=BnBResponse)
def bnb(request: BnBRequest) -> BnBResponse:
    try:
        X = request.to_point_set()
        bound = BoundSpec.hk() if request.bound == "hk" else BoundSpec.comb(request.c)
        result = branch_and_bound(X, bound, seed=request.seed)
    except (InvalidArgumentError, ValueError) as exc:
        raise _bad_request(exc) from exc
    except LabError as exc:
        logger.error(f"Fallo del branch and bound: {exc}")
        raise HTTPException(status_code=500, detail=str(exc)) from exc
    problems = verify_certificate(result)
    if problems:
        logger.error(f"Certificado invalido: {problems}")
        raise HTTPException(status_code=500, detail=str(InvariantError("; ".join(problems))))
    return BnBResponse(length=result.tour.length, order=list(result.tour.order), stats=result.stats.to_dict())


# --- Punto de entrada ---
if __name__ == "__main__":
    logger.info(f"Iniciando servidor en http://{HOST}:{PORT}")
    uvicorn.run(
        "app.main:app" if RELOAD else app,
        host=HOST,
        port=PORT,
        reload=RELOAD,
        log_level="info",
    )
