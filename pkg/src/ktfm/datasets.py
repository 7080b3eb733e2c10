"""Dataset loading, id vocabularies, and synthetic data generation.

Raw logs arrive as CSV with string ids; everything downstream wants dense
0-based ids, so loaders build (or reuse) a vocabulary mapping raw ids to
dense indices by first appearance. The synthetic generators exist as
verification oracles: they save the parameters that produced the data so
recovery can be checked against ground truth.
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, ndtr

from .encoding import EncodingError, QMatrix, Triplet, load_qmatrix
from .model import FMParams, Link


class DataFormatError(ValueError):
    """Malformed or inconsistent input files."""


@dataclass
class Vocabulary:
    """Raw-string id to dense index maps for users, items, and extra columns."""

    users: dict[str, int] = field(default_factory=dict)
    items: dict[str, int] = field(default_factory=dict)
    extras: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"users": self.users, "items": self.items, "extras": self.extras}

    @classmethod
    def from_dict(cls, payload: Mapping) -> "Vocabulary":
        return cls(
            users=dict(payload.get("users", {})),
            items=dict(payload.get("items", {})),
            extras={k: dict(v) for k, v in payload.get("extras", {}).items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _assign(mapping: dict[str, int], raw: str, extend: bool) -> int:
    if raw in mapping:
        return mapping[raw]
    if not extend:
        return -1
    mapping[raw] = len(mapping)
    return mapping[raw]


def load_triplets(
    path,
    vocab: Vocabulary | None = None,
    *,
    allow_unknown: bool = False,
) -> tuple[list[Triplet], dict[str, np.ndarray], Vocabulary]:
    """Read `user_id,item_id,correct[,extra...]` rows in chronological order.

    Without a vocabulary, dense ids are assigned by first appearance. A
    provided vocabulary is frozen: unknown users/items raise, unless
    ``allow_unknown`` maps them to id -1 (their one-hot drops out at encode
    time). Unseen values in a frozen extra column always raise; extra columns
    a frozen vocabulary does not know are ignored entirely.
    """
    fresh = vocab is None
    vocab = Vocabulary() if fresh else vocab
    triplets: list[Triplet] = []
    extras: dict[str, list[int]] = {}
    unknown = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:3] != ["user_id", "item_id", "correct"]:
            raise DataFormatError(
                f"{path}: header must start with user_id,item_id,correct, got {header[:3]}"
            )
        tracked = [
            (pos, name)
            for pos, name in enumerate(header[3:], start=3)
            if fresh or name in vocab.extras
        ]
        for _, name in tracked:
            extras[name] = []
            vocab.extras.setdefault(name, {})
        for lineno, record in enumerate(reader, start=2):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if len(record) != len(header):
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(record)}"
                )
            raw_user, raw_item, raw_correct = (f.strip() for f in record[:3])
            if raw_correct not in ("0", "1"):
                raise DataFormatError(
                    f"{path}: line {lineno}: correct must be 0 or 1, got {raw_correct!r}"
                )
            user = _assign(vocab.users, raw_user, fresh)
            item = _assign(vocab.items, raw_item, fresh)
            if user < 0 or item < 0:
                if not allow_unknown:
                    raise DataFormatError(
                        f"{path}: line {lineno}: id not in the provided vocabulary"
                    )
                unknown += 1
            triplets.append(Triplet(user, item, int(raw_correct)))
            for pos, name in tracked:
                raw_value = record[pos].strip()
                column = vocab.extras[name]
                if raw_value not in column:
                    if not fresh:
                        raise DataFormatError(
                            f"{path}: line {lineno}: unseen value {raw_value!r} "
                            f"for extra column {name!r}"
                        )
                    column[raw_value] = len(column)
                extras[name].append(column[raw_value])
    if not triplets:
        raise DataFormatError(f"{path}: no data rows")
    if unknown:
        warnings.warn(f"{path}: {unknown} rows reference ids outside the vocabulary")
    return triplets, {k: np.array(v) for k, v in extras.items()}, vocab


def write_triplets(
    path,
    triplets: Sequence[Triplet],
    vocab: Vocabulary | None = None,
    extras: Mapping[str, Sequence[int]] | None = None,
) -> None:
    """Inverse of :func:`load_triplets`; dense ids map back through the vocab."""
    extras = extras or {}
    inv_users = inv_items = None
    inv_extras = {}
    if vocab is not None:
        inv_users = {v: k for k, v in vocab.users.items()}
        inv_items = {v: k for k, v in vocab.items.items()}
        inv_extras = {
            name: {v: k for k, v in column.items()}
            for name, column in vocab.extras.items()
        }
    names = list(extras)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "item_id", "correct"] + names)
        for r, t in enumerate(triplets):
            user = inv_users[t.student] if inv_users else str(t.student)
            item = inv_items[t.item] if inv_items else str(t.item)
            row = [user, item, str(t.outcome)]
            for name in names:
                value = int(extras[name][r])
                row.append(inv_extras[name][value] if name in inv_extras and inv_extras[name] else str(value))
            writer.writerow(row)


def align_qmatrix(q: QMatrix, item_vocab: Mapping[str, int], *, vocab_order: bool = False) -> QMatrix:
    """Permute q-matrix rows into dense item order.

    Raw q-matrix rows follow raw integer item ids (0- or 1-based, detected
    from the id range). With ``vocab_order`` the rows are assumed to already
    follow the vocabulary's dense indexing, which is the convention when an
    explicit vocabulary file accompanies the data.
    """
    n_dense = len(item_vocab)
    if n_dense == 0:
        raise EncodingError("empty item vocabulary")
    if vocab_order:
        if q.n_items < n_dense:
            raise EncodingError(
                f"q-matrix has {q.n_items} rows but vocabulary names {n_dense} items"
            )
        return q  # trailing rows are simply items never attempted
    try:
        raw_ids = {raw: int(raw) for raw in item_vocab}
    except ValueError:
        raise EncodingError(
            "item ids are not integers; supply a vocabulary file whose dense "
            "order matches the q-matrix rows"
        ) from None
    values = raw_ids.values()
    if min(values) >= 1 and max(values) == q.n_items:
        base = 1
    elif min(values) >= 0 and max(values) < q.n_items:
        base = 0
    else:
        raise EncodingError(
            f"item ids span [{min(values)}, {max(values)}] which does not index "
            f"a {q.n_items}-row q-matrix"
        )
    order = np.zeros(n_dense, dtype=np.int64)
    for raw, dense in item_vocab.items():
        order[dense] = raw_ids[raw] - base
    return q.reordered(order)


@dataclass
class Dataset:
    """A loaded log plus everything needed to encode it."""

    triplets: list[Triplet]
    qmatrix: QMatrix | None
    vocab: Vocabulary
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_students(self) -> int:
        return len(self.vocab.users)

    @property
    def n_items(self) -> int:
        if self.qmatrix is not None:
            return self.qmatrix.n_items
        return len(self.vocab.items)

    @property
    def extra_columns(self) -> tuple[tuple[str, int], ...]:
        return tuple((name, len(self.vocab.extras[name])) for name in self.extras)


def load_dataset(
    triplets_path,
    qmatrix_path=None,
    vocab_path=None,
) -> Dataset:
    vocab = Vocabulary.load(vocab_path) if vocab_path else None
    triplets, extras, vocab = load_triplets(triplets_path, vocab)
    qmatrix = None
    if qmatrix_path:
        raw = load_qmatrix(qmatrix_path)
        qmatrix = align_qmatrix(raw, vocab.items, vocab_order=vocab_path is not None)
    return Dataset(triplets, qmatrix, vocab, extras)


# ---------------------------------------------------------------------------
# synthetic generators


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic log with known ground truth."""

    generator: str  # rasch | mirt | pfa | ktm
    n_students: int
    n_items: int
    n_skills: int = 0
    d: int = 0
    attempts: int = 1  # per (student, item) pair
    link: Link = Link.LOGIT
    seed: int = 0
    scale: float = 1.0  # std dev of the true parameters

    def __post_init__(self):
        if self.generator not in ("rasch", "mirt", "pfa", "ktm"):
            raise ValueError(f"unknown generator {self.generator!r}")
        if min(self.n_students, self.n_items, self.attempts) <= 0:
            raise ValueError("counts must be positive")
        if self.generator in ("mirt", "ktm") and self.d < 1:
            raise ValueError(f"{self.generator} needs d >= 1")
        if self.generator in ("pfa", "ktm") and self.n_skills <= 0:
            raise ValueError(f"{self.generator} needs skills")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


@dataclass
class SyntheticData:
    triplets: list[Triplet]
    qmatrix: QMatrix | None
    truth: dict


def _random_qmatrix(n_items: int, n_skills: int, rng) -> QMatrix:
    """Each item exercises one or two distinct skills."""
    m = np.zeros((n_items, n_skills), dtype=np.int8)
    for j in range(n_items):
        count = 1 if n_skills == 1 else int(rng.integers(1, 3))
        for k in rng.choice(n_skills, size=count, replace=False):
            m[j, k] = 1
    return QMatrix(m)


def _inv_link(link: Link, z: np.ndarray) -> np.ndarray:
    return expit(z) if link is Link.LOGIT else ndtr(z)


def simulate_pfa(
    q: QMatrix,
    skill_bias: np.ndarray,
    win_gain: np.ndarray,
    fail_gain: np.ndarray,
    n_students: int,
    attempts: int,
    link: Link,
    rng,
) -> list[Triplet]:
    """Sequential attempts whose success odds follow the counter formula.

    Score of student i on item j is the sum over the item's skills of
    ``skill_bias[k] + win_gain[k] * wins[i,k] + fail_gain[k] * fails[i,k]``.
    """
    triplets = []
    for student in range(n_students):
        wins = np.zeros(q.n_skills)
        fails = np.zeros(q.n_skills)
        for _ in range(attempts):
            for item in rng.permutation(q.n_items):
                kc = list(q.kc(int(item)))
                z = float(
                    skill_bias[kc].sum()
                    + (win_gain[kc] * wins[kc]).sum()
                    + (fail_gain[kc] * fails[kc]).sum()
                )
                outcome = int(rng.random() < _inv_link(link, np.array(z)))
                triplets.append(Triplet(student, int(item), outcome))
                if outcome:
                    wins[kc] += 1
                else:
                    fails[kc] += 1
    return triplets


def generate_synthetic(spec: SynthSpec) -> SyntheticData:
    """Draw ground-truth parameters, then outcomes from the matching model."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
    n, m = spec.n_students, spec.n_items
    truth: dict = {
        "generator": spec.generator,
        "link": spec.link.value,
        "seed": spec.seed,
        "n_students": n,
        "n_items": m,
    }

    if spec.generator in ("rasch", "mirt"):
        ability = rng.normal(0.0, spec.scale, size=n)
        difficulty = rng.normal(0.0, spec.scale, size=m)
        truth["ability"] = ability.tolist()
        truth["difficulty"] = difficulty.tolist()
        if spec.generator == "mirt":
            emb_scale = spec.scale / np.sqrt(spec.d)
            user_vecs = rng.normal(0.0, emb_scale, size=(n, spec.d))
            item_vecs = rng.normal(0.0, emb_scale, size=(m, spec.d))
            truth["user_vectors"] = user_vecs.tolist()
            truth["item_vectors"] = item_vecs.tolist()
        pairs = [(i, j) for i in range(n) for j in range(m)] * spec.attempts
        order = rng.permutation(len(pairs))
        triplets = []
        for idx in order:
            i, j = pairs[idx]
            z = ability[i] - difficulty[j]
            if spec.generator == "mirt":
                z += float(user_vecs[i] @ item_vecs[j])
            outcome = int(rng.random() < float(_inv_link(spec.link, np.array(z))))
            triplets.append(Triplet(i, j, outcome))
        return SyntheticData(triplets, None, truth)

    q = _random_qmatrix(m, spec.n_skills, rng)
    truth["qmatrix"] = q.matrix.tolist()

    if spec.generator == "pfa":
        skill_bias = rng.normal(0.0, spec.scale, size=spec.n_skills)
        win_gain = np.abs(rng.normal(0.0, spec.scale / 4, size=spec.n_skills))
        fail_gain = -np.abs(rng.normal(0.0, spec.scale / 4, size=spec.n_skills))
        truth["skill_bias"] = skill_bias.tolist()
        truth["win_gain"] = win_gain.tolist()
        truth["fail_gain"] = fail_gain.tolist()
        triplets = simulate_pfa(
            q, skill_bias, win_gain, fail_gain, n, spec.attempts, spec.link, rng
        )
        return SyntheticData(triplets, q, truth)

    # ktm: full feature model over users+items+skills+wins+fails
    from .encoding import EncodingConfig
    from .model import raw_score
    from .sparse import SparseRow

    config = EncodingConfig(
        use_users=True, use_items=True, use_skills=True, use_wins=True, use_fails=True
    )
    space = config.feature_space(n, m, spec.n_skills)
    w = rng.normal(0.0, spec.scale / 2, size=space.width)
    V = rng.normal(0.0, spec.scale / (2 * np.sqrt(spec.d)), size=(space.width, spec.d))
    params = FMParams(0.0, w, V)
    truth["w"] = w.tolist()
    truth["V"] = V.tolist()
    truth["blocks"] = list(space.blocks)

    triplets = []
    wins = np.zeros((n, spec.n_skills), dtype=np.int64)
    fails = np.zeros((n, spec.n_skills), dtype=np.int64)
    for student in range(n):
        for _ in range(spec.attempts):
            for item in rng.permutation(m):
                item = int(item)
                kc = q.kc(item)
                pairs = [(space.column("users", student), 1.0), (space.column("items", item), 1.0)]
                off = space.offset("skills")
                pairs.extend((off + k, 1.0) for k in kc)
                off = space.offset("wins")
                pairs.extend((off + k, float(wins[student, k])) for k in kc if wins[student, k])
                off = space.offset("fails")
                pairs.extend((off + k, float(fails[student, k])) for k in kc if fails[student, k])
                z = raw_score(params, SparseRow.from_pairs(pairs))
                outcome = int(rng.random() < float(_inv_link(spec.link, np.array(z))))
                triplets.append(Triplet(student, item, outcome))
                if outcome:
                    for k in kc:
                        wins[student, k] += 1
                else:
                    for k in kc:
                        fails[student, k] += 1
    return SyntheticData(triplets, q, truth)


def oracle_probabilities(truth: Mapping, triplets: Sequence[Triplet]) -> np.ndarray:
    """True success probabilities under the generating parameters.

    Counter-based generators replay the observed outcomes to rebuild the
    counter history, so the returned probability is the one each attempt was
    actually drawn from.
    """
    link = Link(truth["link"])
    kind = truth["generator"]
    if kind in ("rasch", "mirt"):
        ability = np.asarray(truth["ability"])
        difficulty = np.asarray(truth["difficulty"])
        z = np.array([ability[t.student] - difficulty[t.item] for t in triplets])
        if kind == "mirt":
            uv = np.asarray(truth["user_vectors"])
            iv = np.asarray(truth["item_vectors"])
            z += np.array([float(uv[t.student] @ iv[t.item]) for t in triplets])
        return _inv_link(link, z)
    if kind == "pfa":
        q = QMatrix(np.array(truth["qmatrix"], dtype=np.int8))
        skill_bias = np.asarray(truth["skill_bias"])
        win_gain = np.asarray(truth["win_gain"])
        fail_gain = np.asarray(truth["fail_gain"])
        n = int(truth["n_students"])
        wins = np.zeros((n, q.n_skills))
        fails = np.zeros((n, q.n_skills))
        probs = np.empty(len(triplets))
        for r, t in enumerate(triplets):
            kc = list(q.kc(t.item))
            z = float(
                skill_bias[kc].sum()
                + (win_gain[kc] * wins[t.student, kc]).sum()
                + (fail_gain[kc] * fails[t.student, kc]).sum()
            )
            probs[r] = float(_inv_link(link, np.array(z)))
            if t.outcome:
                wins[t.student, kc] += 1
            else:
                fails[t.student, kc] += 1
        return probs
    raise ValueError(f"no oracle for generator {kind!r}")


def write_synthetic(data: SyntheticData, outdir) -> dict[str, str]:
    """Write triplets.csv (+ qmatrix.csv) and truth.json; returns the paths."""
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"triplets": str(outdir / "triplets.csv"), "truth": str(outdir / "truth.json")}
    write_triplets(paths["triplets"], data.triplets)
    if data.qmatrix is not None:
        paths["qmatrix"] = str(outdir / "qmatrix.csv")
        with open(paths["qmatrix"], "w", newline="\n") as fh:
            for row in data.qmatrix.matrix:
                fh.write(",".join(str(int(c)) for c in row) + "\n")
    with open(paths["truth"], "w", newline="\n") as fh:
        json.dump(data.truth, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return paths


# ---------------------------------------------------------------------------
# Assistments 2009-2010 skill-builder CSV

ASSISTMENTS_EXTRAS = ("first_action", "school_id", "teacher_id", "tutor_mode")


def convert_assistments(path, out_triplets, out_qmatrix) -> None:
    """Rewrite the public skill-builder CSV into the plain triplet format.

    Expects at least ``order_id, user_id, problem_id, correct, skill_id`` plus
    the four extra columns. Multi-skill problems appear as repeated rows with
    the same order id; they are merged into one interaction whose item maps to
    all its skills in the q-matrix. Rows without a skill tag keep an empty
    skill set.
    """
    by_order: dict[int, dict] = {}
    problem_skills: dict[str, set[str]] = {}
    with open(path, newline="", encoding="utf-8", errors="replace") as fh:
        reader = csv.DictReader(fh)
        need = {"order_id", "user_id", "problem_id", "correct"}
        if not need.issubset(reader.fieldnames or ()):
            raise DataFormatError(
                f"{path}: missing columns {sorted(need - set(reader.fieldnames or ()))}"
            )
        for record in reader:
            order = int(record["order_id"])
            problem = record["problem_id"].strip()
            skill = (record.get("skill_id") or "").strip()
            if skill and skill.lower() != "na":
                problem_skills.setdefault(problem, set()).add(skill)
            if order in by_order:
                continue
            correct = record["correct"].strip()
            if correct not in ("0", "1"):
                continue  # scaffolding rows carry partial credit; skip them
            entry = {
                "user_id": record["user_id"].strip(),
                "item_id": problem,
                "correct": correct,
            }
            for name in ASSISTMENTS_EXTRAS:
                entry[name] = (record.get(name) or "unknown").strip() or "unknown"
            by_order[order] = entry

    skills = sorted({s for group in problem_skills.values() for s in group})
    skill_col = {s: k for k, s in enumerate(skills)}
    problems: dict[str, int] = {}
    rows = [by_order[order] for order in sorted(by_order)]
    for entry in rows:
        problems.setdefault(entry["item_id"], len(problems))

    with open(out_triplets, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "item_id", "correct", *ASSISTMENTS_EXTRAS])
        for entry in rows:
            writer.writerow(
                [entry["user_id"], str(problems[entry["item_id"]]), entry["correct"]]
                + [entry[name] for name in ASSISTMENTS_EXTRAS]
            )
    matrix = np.zeros((len(problems), max(len(skills), 1)), dtype=np.int8)
    for problem, dense in problems.items():
        for skill in problem_skills.get(problem, ()):
            matrix[dense, skill_col[skill]] = 1
    with open(out_qmatrix, "w", newline="\n") as fh:
        for row in matrix:
            fh.write(",".join(str(int(c)) for c in row) + "\n")
