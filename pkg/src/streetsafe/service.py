"""Crowdsourcing backend: serve image pairs, record forced choices, rate live.

The append-only comparison log is the source of truth: every accepted
submission is written (and flushed) to the log before the in-memory
rating table changes, and the table is rebuilt by replaying the log at
startup. All mutations pass through a single lock, so the log order is
the commit order and concurrent readers always see consistent snapshots.
"""

from __future__ import annotations

import mimetypes
import random
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from .rating import (
    ComparisonRecord,
    RatingTable,
    TrueSkillParams,
    format_comparison_line,
    init_rating,
    load_comparison_log,
    normalize_scores,
    update,
)
from .validation import DataValidationError

DEFAULT_TOKEN_TTL_SECONDS = 30 * 60


@dataclass(frozen=True)
class PairAssignment:
    pair_token: str
    left_id: str
    right_id: str
    issued_at: float


class ChoiceSubmission(BaseModel):
    pair_token: str
    chosen: Literal["left", "right"]
    age: str | None = None
    gender: str | None = None
    location: str | None = None


class AnnotationService:
    """In-process state behind the HTTP API.

    ``pairing`` is "balanced" (uniform among least-compared images, then a
    random partner) or "uniform" (any distinct pair). Comparison counts
    increment on submission, not assignment, so abandoned pairs cannot
    starve the balancing.
    """

    def __init__(
        self,
        image_dir: str | Path,
        log_path: str | Path,
        params: TrueSkillParams | None = None,
        pairing: str = "balanced",
        token_ttl: float = DEFAULT_TOKEN_TTL_SECONDS,
        seed: int | None = None,
    ):
        if pairing not in ("balanced", "uniform"):
            raise DataValidationError(f"unknown pairing strategy {pairing!r}")
        self.image_dir = Path(image_dir)
        if not self.image_dir.is_dir():
            raise DataValidationError(f"image directory not found: {self.image_dir}")
        self.registry: dict[str, Path] = {
            p.name: p for p in sorted(self.image_dir.iterdir()) if p.is_file()
        }
        self.log_path = Path(log_path)
        self.params = params or TrueSkillParams()
        self.pairing = pairing
        self.token_ttl = token_ttl
        self._lock = threading.Lock()
        self._rng = random.Random(seed)
        self._outstanding: dict[str, PairAssignment] = {}
        self._consumed: set[str] = set()
        self._last_ts = 0.0
        self.table = RatingTable(params=self.params)
        if self.log_path.exists():
            for record in load_comparison_log(self.log_path):
                self._apply(record)
                self._last_ts = max(self._last_ts, record.timestamp)
        self._log_fh = self.log_path.open("a", encoding="utf-8")

    def close(self) -> None:
        self._log_fh.close()

    def _apply(self, record: ComparisonRecord) -> None:
        winner = self.table.ratings.get(record.winner_id) or init_rating(self.params)
        loser = self.table.ratings.get(record.loser_id) or init_rating(self.params)
        new_winner, new_loser = update(winner, loser, self.params)
        self.table.ratings[record.winner_id] = new_winner
        self.table.ratings[record.loser_id] = new_loser

    def _games(self, image_id: str) -> int:
        rating = self.table.ratings.get(image_id)
        return rating.games if rating else 0

    def get_pair(self) -> PairAssignment:
        with self._lock:
            ids = list(self.registry)
            if len(ids) < 2:
                raise DataValidationError("need at least two registered images")
            if self.pairing == "balanced":
                lowest = min(self._games(i) for i in ids)
                pool = [i for i in ids if self._games(i) == lowest]
                first = self._rng.choice(pool)
                partner = self._rng.choice([i for i in ids if i != first])
                pair = [first, partner]
                self._rng.shuffle(pair)
            else:
                pair = self._rng.sample(ids, 2)
            assignment = PairAssignment(
                pair_token=secrets.token_urlsafe(16),
                left_id=pair[0],
                right_id=pair[1],
                issued_at=time.time(),
            )
            self._outstanding[assignment.pair_token] = assignment
            return assignment

    def submit_choice(self, submission: ChoiceSubmission) -> dict:
        """Validate the token, append to the log, then update ratings.

        The log write (with flush) strictly precedes the in-memory update;
        a crash in between is healed by replay at the next startup.
        """
        with self._lock:
            token = submission.pair_token
            if token in self._consumed:
                raise _HttpError(409, "pair token already used")
            assignment = self._outstanding.get(token)
            if assignment is None:
                raise _HttpError(404, "unknown pair token")
            if time.time() - assignment.issued_at > self.token_ttl:
                del self._outstanding[token]
                raise _HttpError(410, "pair token expired")
            winner = (
                assignment.left_id if submission.chosen == "left" else assignment.right_id
            )
            loser = (
                assignment.right_id if submission.chosen == "left" else assignment.left_id
            )
            # Monotone timestamps even under clock adjustment.
            ts = max(time.time(), self._last_ts)
            self._last_ts = ts
            record = ComparisonRecord(
                timestamp=ts,
                session=token,
                winner_id=winner,
                loser_id=loser,
                age=submission.age,
                gender=submission.gender,
                location=submission.location,
            )
            self._log_fh.write(format_comparison_line(record) + "\n")
            self._log_fh.flush()
            self._apply(record)
            del self._outstanding[token]
            self._consumed.add(token)
            response: dict = {"ok": True}
            try:
                scores = normalize_scores(self.table)
            except DataValidationError:
                scores = None
            if scores is not None:
                response["left_score"] = scores.get(assignment.left_id)
                response["right_score"] = scores.get(assignment.right_id)
            return response

    def get_scores(self) -> dict:
        with self._lock:
            ratings = dict(self.table.ratings)
            try:
                scores = normalize_scores(self.table)
            except DataValidationError:
                return {"status": "collecting", "scores": []}
        rows = [
            {
                "image_id": image_id,
                "score": scores[image_id],
                "mu": rating.mu,
                "sigma": rating.sigma,
                "games": rating.games,
            }
            for image_id, rating in ratings.items()
        ]
        rows.sort(key=lambda r: (-r["score"], r["image_id"]))
        return {"status": "ok", "scores": rows}

    def image_path(self, image_id: str) -> Path:
        # Registry lookup only; image ids never touch the filesystem layer.
        path = self.registry.get(image_id)
        if path is None:
            raise _HttpError(404, "unknown image id")
        return path


class _HttpError(Exception):
    def __init__(self, status_code: int, detail: str):
        self.status_code = status_code
        self.detail = detail


def create_app(service: AnnotationService, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="pairwise safety annotation service")

    @app.exception_handler(_HttpError)
    async def _http_error(request, exc: _HttpError):
        return JSONResponse(status_code=exc.status_code, content={"detail": exc.detail})

    @app.exception_handler(DataValidationError)
    async def _data_error(request, exc: DataValidationError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.get("/api/health")
    def health():
        return {"ok": True}

    @app.get("/api/pair")
    def get_pair():
        assignment = service.get_pair()
        return {
            "pair_token": assignment.pair_token,
            "left_id": assignment.left_id,
            "right_id": assignment.right_id,
        }

    @app.post("/api/choice")
    def post_choice(submission: ChoiceSubmission):
        return service.submit_choice(submission)

    @app.get("/api/scores")
    def get_scores():
        return service.get_scores()

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str):
        path = service.image_path(image_id)
        media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        return Response(content=path.read_bytes(), media_type=media_type)

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="static")

    return app
