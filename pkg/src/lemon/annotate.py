"""Title-based surgery-type and procedure-type annotation with QC gating.

Keyword matching runs first; titles that match nothing fall back to a
completion endpoint whose raw transcripts are always persisted and whose
output always lands in the human QC queue as a pending proposal.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Protocol

import httpx

from .errors import InvalidTransition, NotFound
from .store import atomic_write_text

ROBOTIC = "robotic"
NON_ROBOTIC = "non-robotic"
NEEDS_REVIEW = "needs_review"

QC_PENDING = "pending"
QC_APPROVED = "approved"
QC_CORRECTED = "corrected"

ROBOTIC_KEYWORDS: tuple[str, ...] = (
    "Robotic",
    "Robot",
    "Robo",
    "Hugo",
    "Versius",
    "Senhance",
    "Telerobotic",
    "Console",
    "da Vinci",
)

PROCEDURE_NAMES: tuple[str, ...] = (
    "pancreatectomy",
    "pancreaticoduodenectomy",
    "splenectomy",
    "ampullectomy",
    "hepatectomy",
    "nephrectomy",
    "low anterior resection",
    "colectomy",
    "abdominoperineal resection",
    "pulmonary lobectomy",
    "hartmanns",
    "prostatectomy",
    "gastric bypass",
    "duodenal switch",
    "gastrectomy",
    "small bowel resection",
    "hernia repair",
    "ulcer repair",
    "cholecystectomy",
    "appendectomy",
    "ileocolic resection",
    "cecectomy",
    "myomectomy",
    "hysterectomy",
    "nissen fundoplication",
    "adrenalectomy",
    "thymectomy",
    "rectopexy",
    "adhesiolysis",
    "esophagectomy",
    "cystectomy",
    "jejunostomy",
    "ileorectal anastomosis",
    "kidney transplant",
    "vaginectomy",
)

PROMPT_TEMPLATE = (
    "You are a highly knowledgeable assistant specializing in surgical procedures "
    "and medical terminology. Your expertise includes identifying and categorizing "
    "surgical interventions based on clinical descriptions and procedural contexts. "
    "Here is a list of 35 possible surgical procedure types: {procedures}. "
    "Based on the description of the surgical video: {title}, determine the most "
    "likely procedure type from the list. Focus on matching the description to the "
    "procedure type that best aligns with the terminology and context provided."
)


def _phrase_pattern(phrase: str) -> re.Pattern:
    # Whole-word matching; internal spaces tolerate any whitespace run.
    escaped = r"\s+".join(re.escape(part) for part in phrase.split())
    return re.compile(rf"(?<!\w){escaped}(?!\w)", re.IGNORECASE)


@dataclass(frozen=True)
class KeywordTable:
    """Immutable matching vocabulary: 9 robotic keywords, 35 procedure names."""

    robotic_keywords: tuple[str, ...] = ROBOTIC_KEYWORDS
    procedure_names: tuple[str, ...] = PROCEDURE_NAMES

    def robotic_patterns(self) -> list[re.Pattern]:
        return [_phrase_pattern(k) for k in self.robotic_keywords]

    def procedure_patterns(self) -> list[tuple[str, re.Pattern]]:
        return [(name, _phrase_pattern(name)) for name in self.procedure_names]


BUILTIN_TABLE = KeywordTable()


def match_surgery_type(title: str, table: KeywordTable = BUILTIN_TABLE) -> str:
    """Robotic iff any keyword occurs as a whole word, case-insensitively.

    Anything else is needs_review: a title without keywords becomes
    non-robotic only once a human approves it.
    """
    if not title:
        raise ValueError("title must be non-empty")
    for pattern in table.robotic_patterns():
        if pattern.search(title):
            return ROBOTIC
    return NEEDS_REVIEW


def match_procedure(title: str, table: KeywordTable = BUILTIN_TABLE) -> list[str]:
    """All vocabulary names occurring in the title, in vocabulary order."""
    if not title:
        raise ValueError("title must be non-empty")
    return [name for name, pattern in table.procedure_patterns() if pattern.search(title)]


def build_prompt(title: str, table: KeywordTable = BUILTIN_TABLE) -> str:
    return PROMPT_TEMPLATE.format(
        procedures=", ".join(table.procedure_names), title=title
    )


def parse_procedure_response(text: str, table: KeywordTable = BUILTIN_TABLE) -> str | None:
    """Earliest vocabulary name mentioned in the response; longest wins on ties."""
    best: tuple[int, int, str] | None = None
    for name, pattern in table.procedure_patterns():
        found = pattern.search(text)
        if found:
            candidate = (found.start(), -len(name), name)
            if best is None or candidate < best:
                best = candidate
    return best[2] if best else None


class CompletionClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class HttpCompletionClient:
    """Minimal JSON completion endpoint: POST {model, prompt} -> {text}."""

    def __init__(
        self,
        endpoint: str,
        model: str = "default",
        token_env: str = "LEMON_LLM_TOKEN",
        timeout_s: float = 30.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.token_env = token_env
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def complete(self, prompt: str) -> str:
        headers = {}
        token = os.environ.get(self.token_env)
        if token:
            headers["authorization"] = f"Bearer {token}"
        response = self._client.post(
            self.endpoint,
            json={"model": self.model, "prompt": prompt},
            headers=headers,
        )
        response.raise_for_status()
        payload = response.json()
        for key in ("text", "completion"):
            if isinstance(payload.get(key), str):
                return payload[key]
        raise ValueError(f"completion response missing text field: {list(payload)}")


def _fixture_name(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16] + ".json"


class ReplayCompletionClient:
    """Deterministic record/replay wrapper for offline runs.

    A recorded transcript for the exact prompt is replayed; otherwise the
    wrapped live client (if any) answers and the transcript is recorded.
    """

    def __init__(self, fixtures_dir: Path | str, live: CompletionClient | None = None):
        self.fixtures_dir = Path(fixtures_dir)
        self.live = live

    def complete(self, prompt: str) -> str:
        path = self.fixtures_dir / _fixture_name(prompt)
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))["response"]
        if self.live is None:
            raise NotFound(f"no recorded completion for this prompt ({path.name})")
        response = self.live.complete(prompt)
        atomic_write_text(
            path, json.dumps({"prompt": prompt, "response": response}, ensure_ascii=False)
        )
        return response


def record_fixture(fixtures_dir: Path | str, prompt: str, response: str) -> Path:
    path = Path(fixtures_dir) / _fixture_name(prompt)
    atomic_write_text(
        path, json.dumps({"prompt": prompt, "response": response}, ensure_ascii=False)
    )
    return path


@dataclass(frozen=True)
class LlmOutcome:
    """Result of one fallback attempt; transcript is kept even on failure."""

    status: str  # "candidate" | "unreachable" | "unparseable"
    candidate: str | None
    reason: str | None
    prompt: str
    response: str | None


def llm_fallback(
    title: str,
    client: CompletionClient,
    table: KeywordTable = BUILTIN_TABLE,
) -> LlmOutcome:
    """Ask the completion endpoint for one candidate procedure.

    Whatever happens, the outcome is a pending proposal for human QC; this
    path never produces an approved label by itself.
    """
    prompt = build_prompt(title, table)
    try:
        response = client.complete(prompt)
    except Exception as exc:
        return LlmOutcome("unreachable", None, f"llm_unreachable: {exc}", prompt, None)
    candidate = parse_procedure_response(response, table)
    if candidate is None:
        return LlmOutcome(
            "unparseable", None, "response contains no vocabulary name", prompt, response
        )
    return LlmOutcome("candidate", candidate, None, prompt, response)


@dataclass(frozen=True)
class ProcedureLabel:
    """One video's annotation proposal plus its QC state."""

    video_id: str
    procedures: tuple[str, ...]
    surgery_type: str
    provenance: Mapping[str, str]  # per field: keyword | llm | human
    qc_status: str = QC_PENDING
    correction: Mapping | None = None

    def __post_init__(self):
        unknown = set(self.procedures) - set(PROCEDURE_NAMES)
        if unknown:
            raise ValueError(f"procedures outside the vocabulary: {sorted(unknown)}")
        if self.surgery_type not in (ROBOTIC, NON_ROBOTIC, NEEDS_REVIEW):
            raise ValueError(f"bad surgery_type {self.surgery_type!r}")
        if self.qc_status not in (QC_PENDING, QC_APPROVED, QC_CORRECTED):
            raise ValueError(f"bad qc_status {self.qc_status!r}")
        if self.qc_status in (QC_APPROVED, QC_CORRECTED) and not self.procedures:
            raise ValueError("procedures must be non-empty once QC accepted")

    def to_json(self) -> dict:
        row = {
            "video_id": self.video_id,
            "procedures": list(self.procedures),
            "surgery_type": self.surgery_type,
            "provenance": dict(self.provenance),
            "qc_status": self.qc_status,
        }
        if self.correction is not None:
            row["correction"] = dict(self.correction)
        return row

    @classmethod
    def from_json(cls, raw: Mapping) -> "ProcedureLabel":
        return cls(
            video_id=raw["video_id"],
            procedures=tuple(raw["procedures"]),
            surgery_type=raw["surgery_type"],
            provenance=dict(raw["provenance"]),
            qc_status=raw.get("qc_status", QC_PENDING),
            correction=raw.get("correction"),
        )


def propose_label(
    video_id: str,
    title: str,
    table: KeywordTable = BUILTIN_TABLE,
    llm_client: CompletionClient | None = None,
) -> tuple[ProcedureLabel, LlmOutcome | None]:
    """Keyword pass first, completion fallback second; always pending QC."""
    surgery = match_surgery_type(title, table)
    procedures = match_procedure(title, table)
    provenance = {
        "surgery_type": "keyword",
        "procedures": "keyword" if procedures else "none",
    }
    outcome = None
    if not procedures and llm_client is not None:
        outcome = llm_fallback(title, llm_client, table)
        if outcome.candidate:
            procedures = [outcome.candidate]
            provenance["procedures"] = "llm"
    label = ProcedureLabel(
        video_id=video_id,
        procedures=tuple(procedures),
        surgery_type=surgery,
        provenance=provenance,
    )
    return label, outcome


def apply_qc_decision(
    label: ProcedureLabel,
    action: str,
    corrected: Mapping | None = None,
) -> ProcedureLabel:
    """Move a pending label to approved or corrected; anything else refuses."""
    if label.qc_status != QC_PENDING:
        raise InvalidTransition(
            f"label for {label.video_id} already {label.qc_status}"
        )
    if action == "approve":
        surgery = label.surgery_type
        if surgery == NEEDS_REVIEW:
            # Human approval of a keyword miss confirms a manual procedure.
            surgery = NON_ROBOTIC
        if not label.procedures:
            raise InvalidTransition("cannot approve a label with no procedures")
        provenance = dict(label.provenance)
        if label.surgery_type == NEEDS_REVIEW:
            provenance["surgery_type"] = "human"
        return replace(
            label, qc_status=QC_APPROVED, surgery_type=surgery, provenance=provenance
        )
    if action == "correct":
        if not corrected:
            raise InvalidTransition("correction requires replacement labels")
        old = {
            "procedures": list(label.procedures),
            "surgery_type": label.surgery_type,
        }
        new_procedures = tuple(corrected.get("procedures", label.procedures))
        if not new_procedures:
            raise InvalidTransition("correction must keep at least one procedure")
        new_surgery = corrected.get("surgery_type", label.surgery_type)
        if new_surgery == NEEDS_REVIEW:
            new_surgery = NON_ROBOTIC
        provenance = dict(label.provenance)
        if tuple(old["procedures"]) != new_procedures:
            provenance["procedures"] = "human"
        if old["surgery_type"] != new_surgery:
            provenance["surgery_type"] = "human"
        return replace(
            label,
            qc_status=QC_CORRECTED,
            procedures=new_procedures,
            surgery_type=new_surgery,
            provenance=provenance,
            correction={
                "old": old,
                "new": {"procedures": list(new_procedures), "surgery_type": new_surgery},
            },
        )
    raise InvalidTransition(f"unknown QC action {action!r}")


def load_labels(path: Path | str) -> dict[str, ProcedureLabel]:
    labels: dict[str, ProcedureLabel] = {}
    path = Path(path)
    if path.exists():
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    label = ProcedureLabel.from_json(json.loads(line))
                    labels[label.video_id] = label
    return labels


def save_labels(path: Path | str, labels: Mapping[str, ProcedureLabel]) -> None:
    text = "".join(
        json.dumps(label.to_json(), ensure_ascii=False, sort_keys=True) + "\n"
        for label in labels.values()
    )
    atomic_write_text(Path(path), text)
