"""Local pairwise-annotation service: builds 10-question HITs (9 unique
pairs plus one order-swapped duplicate), validates submissions with the
completeness / consistency / verification checks, persists accepted labels
to an append-only log, and re-queues rejected pairs.

The queue and log live in plain data structures guarded by one lock; the
HTTP layer (``create_app``) is a thin FastAPI wrapper so the same store can
be driven directly by tests or simulators.
"""
from __future__ import annotations

import itertools
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as D
from . import filters as F

QUESTIONS_PER_HIT = 10
UNIQUE_PAIRS_PER_HIT = 9

# Rejection reasons, stable strings for clients
INCOMPLETE = "Incomplete"
TOO_MANY_EQUAL = "TooManyEqual"
DUPLICATE_INCONSISTENT = "DuplicateInconsistent"
MATH_FAILED = "MathFailed"
SAME_ANNOTATOR_REDO = "SameAnnotatorRedo"

_SWAP = {"left": "right", "right": "left", "equal": "equal", "error": "error"}


class AnnotationError(Exception):
    pass


class InsufficientPendingPairs(AnnotationError):
    pass


class UnknownHit(AnnotationError):
    pass


class AlreadyClosed(AnnotationError):
    pass


@dataclass(frozen=True)
class PairTask:
    ref_id: str
    a: str
    b: str

    def key(self) -> tuple:
        return (self.ref_id, frozenset((self.a, self.b)))


@dataclass(frozen=True)
class Question:
    ref_id: str
    left: str   # filter name shown on the left
    right: str


@dataclass
class HIT:
    hit_id: str
    questions: list[Question]
    math_a: int
    math_b: int
    duplicate_index: int   # which question is the swapped repeat (never sent out)
    original_index: int    # the question it repeats
    # Already-labelled pairs shown again to fill the last HITs of a queue
    # whose size is not a multiple of 9; their verdicts are discarded.
    filler_indices: frozenset = frozenset()

    def public_dict(self) -> dict:
        return {
            "hit_id": self.hit_id,
            "questions": [
                {
                    "index": i,
                    "ref_id": q.ref_id,
                    "left": {"filtered_id": D.filtered_id(q.ref_id, q.left),
                             "url": f"/api/image/{D.filtered_id(q.ref_id, q.left)}"},
                    "right": {"filtered_id": D.filtered_id(q.ref_id, q.right),
                              "url": f"/api/image/{D.filtered_id(q.ref_id, q.right)}"},
                }
                for i, q in enumerate(self.questions)
            ],
            "math": {"a": self.math_a, "b": self.math_b},
        }


@dataclass(frozen=True)
class Submission:
    hit_id: str
    answers: tuple  # 10 verdicts, None/"" for unanswered
    math_answer: int | None
    annotator_id: str


@dataclass(frozen=True)
class ValidationResult:
    accepted: bool
    reasons: tuple[str, ...] = ()


def validate_submission(hit: HIT, sub: Submission) -> ValidationResult:
    """The three quality-control checks: completeness, label consistency on
    the swapped duplicate, and the arithmetic verification question.

    More than one 'equal' verdict in a HIT also rejects: ambiguity on several
    pairs makes the comparisons worthless.
    """
    reasons = []
    answers = list(sub.answers)
    if len(answers) != len(hit.questions) or any(
        a not in ("left", "right", "equal", "error") for a in answers
    ):
        reasons.append(INCOMPLETE)
    else:
        if sum(a == "equal" for a in answers) > 1:
            reasons.append(TOO_MANY_EQUAL)
        original = answers[hit.original_index]
        duplicate = answers[hit.duplicate_index]
        if duplicate != _SWAP[original]:
            reasons.append(DUPLICATE_INCONSISTENT)
    if sub.math_answer is None or sub.math_answer != hit.math_a + hit.math_b:
        reasons.append(MATH_FAILED)
    return ValidationResult(not reasons, tuple(reasons))


@dataclass
class Progress:
    pending: int
    checked_out: int
    accepted_labels: int
    rejected_hits: int
    total_pairs: int


class AnnotationStore:
    """Pending-pair queue, open HITs, and the append-only label log.

    A pair checked out to an open HIT is not offered to another HIT. Accepted
    verdicts go to ``labels.jsonl`` (error verdicts re-queue their pair
    instead); rejected HITs return all their pairs to the queue. Restart
    recovery replays the log: any pair not yet labelled is pending again, so
    a crash can lose open HITs but never recorded labels.
    """

    def __init__(self, data_dir: str | Path, refs: list[D.ReferenceImage],
                 design: D.PairDesign | None = None, seed: int = 0,
                 require_distinct_annotator: bool = False):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.design = design or D.pair_design()
        self.refs = refs
        self.require_distinct_annotator = require_distinct_annotator
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        self._open: dict[str, HIT] = {}
        self._rejected_hits = 0
        self._rejected_by: dict[tuple, set[str]] = {}
        self._labels_path = self.data_dir / "labels.jsonl"

        labelled: set[tuple] = set()
        self._labelled_pool: list[PairTask] = []
        self._accepted = 0
        if self._labels_path.exists():
            for row in D.read_jsonl(self._labels_path):
                rec = D.row_to_label(row)
                labelled.add((rec.ref_id, frozenset((rec.a, rec.b))))
                self._labelled_pool.append(PairTask(rec.ref_id, rec.a, rec.b))
                self._accepted += 1
        tasks = []
        for ref in refs:
            for ia, ib in self.design.edges:
                t = PairTask(ref.id, F.FILTER_NAMES[ia], F.FILTER_NAMES[ib])
                if t.key() not in labelled:
                    tasks.append(t)
        self._pending: deque[PairTask] = deque(tasks)
        self.total_pairs = len(refs) * len(self.design.edges)

    # -- HIT lifecycle -------------------------------------------------------

    def build_hit(self) -> HIT:
        with self._lock:
            if not self._pending:
                raise InsufficientPendingPairs("no pending pairs")
            n_real = min(UNIQUE_PAIRS_PER_HIT, len(self._pending))
            n_fill = UNIQUE_PAIRS_PER_HIT - n_real
            if n_fill > len(self._labelled_pool):
                raise InsufficientPendingPairs(
                    f"{len(self._pending)} pending pairs and only "
                    f"{len(self._labelled_pool)} labelled ones to pad a HIT with"
                )
            picked = [self._pending.popleft() for _ in range(n_real)]
            rng = self._rng
            filler_ordinals = set()
            if n_fill:
                idx = rng.choice(len(self._labelled_pool), size=n_fill, replace=False)
                picked += [self._labelled_pool[i] for i in idx]
                filler_ordinals = set(range(n_real, UNIQUE_PAIRS_PER_HIT))
            questions = []
            for t in picked:
                if rng.integers(0, 2):  # random left/right presentation
                    questions.append(Question(t.ref_id, t.a, t.b))
                else:
                    questions.append(Question(t.ref_id, t.b, t.a))
            original = int(rng.integers(0, UNIQUE_PAIRS_PER_HIT))
            q = questions[original]
            dup = Question(q.ref_id, q.right, q.left)
            dup_pos = int(rng.integers(0, QUESTIONS_PER_HIT))
            questions.insert(dup_pos, dup)

            def shifted(i: int) -> int:
                return i if i < dup_pos else i + 1

            hit = HIT(
                hit_id=uuid.uuid4().hex[:12],
                questions=questions,
                math_a=int(rng.integers(1, 21)),
                math_b=int(rng.integers(1, 21)),
                duplicate_index=dup_pos,
                original_index=shifted(original),
                filler_indices=frozenset(shifted(i) for i in filler_ordinals),
            )
            self._open[hit.hit_id] = hit
            return hit

    def submit(self, hit_id: str, sub: Submission) -> ValidationResult:
        with self._lock:
            hit = self._open.get(hit_id)
            if hit is None:
                raise UnknownHit(hit_id)
            if self.require_distinct_annotator and self._saw_rejection_from(hit, sub.annotator_id):
                # rejected tasks must be redone by other annotators
                self._requeue(hit)
                del self._open[hit_id]
                return ValidationResult(False, (SAME_ANNOTATOR_REDO,))
            result = validate_submission(hit, sub)
            if result.accepted:
                self._record(hit, sub)
            else:
                self._rejected_hits += 1
                for i, q in enumerate(hit.questions):
                    if i == hit.duplicate_index:
                        continue
                    key = (q.ref_id, frozenset((q.left, q.right)))
                    self._rejected_by.setdefault(key, set()).add(sub.annotator_id)
                self._requeue(hit)
            del self._open[hit_id]
            return result

    def _saw_rejection_from(self, hit: HIT, annotator_id: str) -> bool:
        for i, q in enumerate(hit.questions):
            if i == hit.duplicate_index:
                continue
            key = (q.ref_id, frozenset((q.left, q.right)))
            if annotator_id in self._rejected_by.get(key, ()):
                return True
        return False

    def _requeue(self, hit: HIT) -> None:
        for i, q in enumerate(hit.questions):
            if i == hit.duplicate_index or i in hit.filler_indices:
                continue
            self._pending.append(PairTask(q.ref_id, q.left, q.right))

    def _record(self, hit: HIT, sub: Submission) -> None:
        now = time.time()
        for i, q in enumerate(hit.questions):
            if i == hit.duplicate_index or i in hit.filler_indices:
                continue  # repeats and padding are checks, never data
            verdict = sub.answers[i]
            if verdict == "error":
                # display problem: collect this pair again later
                self._pending.append(PairTask(q.ref_id, q.left, q.right))
                continue
            rec = D.LabelRecord(q.ref_id, q.left, q.right, verdict,
                                sub.annotator_id, now)
            D.append_jsonl(self._labels_path, D.label_to_row(rec))
            self._accepted += 1
            self._labelled_pool.append(PairTask(q.ref_id, q.left, q.right))

    # -- inspection ------------------------------------------------------------

    def progress(self) -> Progress:
        with self._lock:
            checked_out = sum(len(h.questions) - 1 for h in self._open.values())
            return Progress(
                pending=len(self._pending),
                checked_out=checked_out,
                accepted_labels=self._accepted,
                rejected_hits=self._rejected_hits,
                total_pairs=self.total_pairs,
            )

    def labels(self) -> list[D.LabelRecord]:
        if not self._labels_path.exists():
            return []
        return D.read_labels(self._labels_path)

    def compact(self) -> None:
        """Rewrite the log atomically keeping the latest verdict per pair."""
        latest: dict[tuple, D.LabelRecord] = {}
        for rec in self.labels():
            latest[(rec.ref_id, frozenset((rec.a, rec.b)))] = rec
        tmp = self._labels_path.with_suffix(".jsonl.tmp")
        D.write_jsonl(tmp, (D.label_to_row(r) for r in latest.values()))
        tmp.replace(self._labels_path)


# -- simulated annotators ------------------------------------------------------


def drive_honest_annotator(store: AnnotationStore, oracle: D.SyntheticAnnotator,
                           images_for, annotator_id: str = "sim-honest",
                           max_hits: int | None = None) -> int:
    """Answer HITs truthfully (by oracle utility) until the queue drains.
    ``images_for(ref_id) -> dict[filter, Image]``. Returns HITs completed."""
    refs = {r.id: r for r in store.refs}
    done = 0
    while True:
        try:
            hit = store.build_hit()
        except InsufficientPendingPairs:
            return done
        answers = []
        for q in hit.questions:
            ref = refs[q.ref_id]
            images = images_for(q.ref_id)
            ua = oracle.utility(ref.category, images[q.left])
            ub = oracle.utility(ref.category, images[q.right])
            if abs(ua - ub) < oracle.epsilon:
                answers.append("equal")
            else:
                answers.append("left" if ua > ub else "right")
        sub = Submission(hit.hit_id, tuple(answers), hit.math_a + hit.math_b,
                         annotator_id)
        result = store.submit(hit.hit_id, sub)
        if result.accepted:
            done += 1
        if max_hits is not None and done >= max_hits:
            return done


# -- HTTP service ---------------------------------------------------------------


def create_app(store: AnnotationStore, filtered_paths: dict[str, str],
               model=None, profile: str = "desk", ui_dir: str | Path | None = None):
    """FastAPI app over the store. ``filtered_paths`` maps filtered_id to a
    PNG path; ``model`` (optional) enables /api/recommend."""
    from fastapi import FastAPI
    from fastapi.responses import FileResponse, JSONResponse
    from fastapi.staticfiles import StaticFiles

    from . import evaluation as E
    from . import imagecore as IC

    app = FastAPI(title="filtrank annotation service")
    refs = {r.id: r for r in store.refs}

    @app.get("/api/hit")
    def get_hit():
        try:
            return store.build_hit().public_dict()
        except InsufficientPendingPairs as exc:
            return JSONResponse({"error": str(exc)}, status_code=409)

    @app.get("/api/image/{filtered_id}")
    def get_image(filtered_id: str):
        path = filtered_paths.get(filtered_id)
        if path is None and filtered_id in refs:
            path = refs[filtered_id].path
        if path is None or not Path(path).exists():
            return JSONResponse({"error": f"unknown image {filtered_id}"}, status_code=404)
        return FileResponse(path, media_type="image/png")

    @app.post("/api/hit/{hit_id}")
    def post_hit(hit_id: str, body: dict):
        answers = body.get("answers") or []
        sub = Submission(
            hit_id,
            tuple(answers),
            body.get("math_answer"),
            str(body.get("annotator_id", "anonymous")),
        )
        try:
            result = store.submit(hit_id, sub)
        except UnknownHit:
            return JSONResponse({"error": f"unknown hit {hit_id}"}, status_code=404)
        return {"status": "accepted" if result.accepted else "rejected",
                "reasons": list(result.reasons)}

    @app.get("/api/progress")
    def get_progress():
        p = store.progress()
        return {
            "pending": p.pending,
            "checked_out": p.checked_out,
            "accepted_labels": p.accepted_labels,
            "rejected_hits": p.rejected_hits,
            "total_pairs": p.total_pairs,
            "ref_ids": sorted(refs),
        }

    @app.get("/api/recommend")
    def recommend(ref: str, k: int = 5):
        if model is None:
            return JSONResponse({"error": "no model loaded"}, status_code=409)
        if ref not in refs:
            return JSONResponse({"error": f"unknown reference {ref}"}, status_code=404)
        img = IC.load_image(refs[ref].path)
        ranking = E.rank_filters(model, ref, img, profile)
        items = [
            {"filter": name, "score": score,
             "filtered_id": D.filtered_id(ref, name),
             "url": f"/api/image/{D.filtered_id(ref, name)}"}
            for name, score in ranking.entries[:k]
        ]
        return {"ref_id": ref, "k": k, "items": items}

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
