"""Panel choice dataset: model, CSV ingestion, standardization, folds, simulation.

The canonical interchange format is a long CSV with one row per
(person, situation, alternative).  A :class:`DatasetSchema` names which
columns hold identifiers, the chosen/availability flags, the alternative
attributes entering the choice model, and the per-person continuous and
binary characteristics entering the class membership model.

Datasets are immutable after construction and safe to share across
concurrent estimation runs.
"""

import csv
import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kv
from .errors import ValidationError


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True, eq=False)
class ChoiceSituation:
    """One choice occasion: a J x P attribute matrix, availability, and choice."""

    attrs: np.ndarray
    available: np.ndarray
    chosen: int

    def __post_init__(self):
        attrs = np.asarray(self.attrs, dtype=float)
        available = np.asarray(self.available, dtype=bool)
        chosen = int(self.chosen)
        if attrs.ndim != 2:
            raise ValidationError("situation attrs must be a J x P matrix")
        j = attrs.shape[0]
        if available.shape != (j,):
            raise ValidationError("availability flags must have one entry per alternative")
        if not 0 <= chosen < j:
            raise ValidationError(f"chosen index {chosen} out of range for {j} alternatives")
        if not available[chosen]:
            raise ValidationError("chosen unavailable: the chosen alternative is not available")
        if int(available.sum()) < 2:
            raise ValidationError("a choice situation needs at least two available alternatives")
        if not np.all(np.isfinite(attrs)):
            raise ValidationError("situation attrs contain non-finite values")
        object.__setattr__(self, "attrs", attrs)
        object.__setattr__(self, "available", available)
        object.__setattr__(self, "chosen", chosen)

    @property
    def alt_count(self):
        return self.attrs.shape[0]

    @property
    def attr_count(self):
        return self.attrs.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ChoiceSituation):
            return NotImplemented
        return (
            self.chosen == other.chosen
            and np.array_equal(self.available, other.available)
            and np.array_equal(self.attrs, other.attrs)
        )


@dataclass(frozen=True, eq=False)
class PersonRecord:
    """One decision-maker: characteristics plus a panel of choice situations."""

    id: object
    s_cont: np.ndarray
    s_bin: np.ndarray
    situations: tuple

    def __post_init__(self):
        s_cont = np.asarray(self.s_cont, dtype=float).reshape(-1)
        s_bin = np.asarray(self.s_bin, dtype=float).reshape(-1)
        situations = tuple(self.situations)
        if not situations:
            raise ValidationError(f"person {self.id!r} has no choice situations")
        if not np.all(np.isfinite(s_cont)):
            raise ValidationError(f"person {self.id!r}: non-finite continuous characteristic")
        if s_bin.size and not np.all((s_bin == 0.0) | (s_bin == 1.0)):
            raise ValidationError(f"person {self.id!r}: binary characteristics must be 0 or 1")
        j = situations[0].alt_count
        p = situations[0].attr_count
        for s in situations[1:]:
            if s.alt_count != j or s.attr_count != p:
                raise ValidationError(f"person {self.id!r}: inconsistent situation dimensions")
        object.__setattr__(self, "s_cont", s_cont)
        object.__setattr__(self, "s_bin", s_bin)
        object.__setattr__(self, "situations", situations)

    def __eq__(self, other):
        if not isinstance(other, PersonRecord):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.s_cont, other.s_cont)
            and np.array_equal(self.s_bin, other.s_bin)
            and len(self.situations) == len(other.situations)
            and all(a == b for a, b in zip(self.situations, other.situations))
        )


@dataclass(frozen=True)
class _PackedData:
    """Dense array view used by the likelihood code paths.

    attrs      : (S, J, P) attribute tensor over all situations
    available  : (S, J) bool
    chosen     : (S,) chosen alternative index
    person_of  : (S,) person index owning each situation
    s_cont     : (N, D_c)
    s_bin      : (N, D_d)
    t_counts   : (N,) situations per person
    """

    attrs: np.ndarray
    available: np.ndarray
    chosen: np.ndarray
    person_of: np.ndarray
    s_cont: np.ndarray
    s_bin: np.ndarray
    t_counts: np.ndarray


@dataclass(frozen=True, eq=False)
class ChoiceDataset:
    """Immutable panel of persons, their characteristics, and their choices."""

    persons: tuple
    alt_count: int
    attr_count: int
    cont_count: int
    bin_count: int

    def __post_init__(self):
        persons = tuple(self.persons)
        if not persons:
            raise ValidationError("dataset needs at least one person")
        if self.alt_count < 2:
            raise ValidationError("dataset needs at least two alternatives")
        if self.attr_count < 1:
            raise ValidationError("dataset needs at least one choice attribute")
        for person in persons:
            if person.s_cont.size != self.cont_count or person.s_bin.size != self.bin_count:
                raise ValidationError(
                    f"person {person.id!r}: characteristic counts differ from the dataset's"
                )
            for s in person.situations:
                if s.alt_count != self.alt_count or s.attr_count != self.attr_count:
                    raise ValidationError(
                        f"person {person.id!r}: situation dimensions differ from the dataset's"
                    )
        object.__setattr__(self, "persons", persons)

    @classmethod
    def build(cls, persons):
        """Construct a dataset, inferring the dimension counts from the first person."""
        persons = tuple(persons)
        if not persons:
            raise ValidationError("dataset needs at least one person")
        first = persons[0].situations[0]
        return cls(
            persons=persons,
            alt_count=first.alt_count,
            attr_count=first.attr_count,
            cont_count=persons[0].s_cont.size,
            bin_count=persons[0].s_bin.size,
        )

    @property
    def n_persons(self):
        return len(self.persons)

    @property
    def n_situations(self):
        return sum(len(p.situations) for p in self.persons)

    @cached_property
    def packed(self):
        n = self.n_persons
        s_total = self.n_situations
        attrs = np.empty((s_total, self.alt_count, self.attr_count))
        available = np.empty((s_total, self.alt_count), dtype=bool)
        chosen = np.empty(s_total, dtype=np.intp)
        person_of = np.empty(s_total, dtype=np.intp)
        s_cont = np.empty((n, self.cont_count))
        s_bin = np.empty((n, self.bin_count))
        t_counts = np.empty(n, dtype=np.intp)
        row = 0
        for i, person in enumerate(self.persons):
            s_cont[i] = person.s_cont
            s_bin[i] = person.s_bin
            t_counts[i] = len(person.situations)
            for situation in person.situations:
                attrs[row] = situation.attrs
                available[row] = situation.available
                chosen[row] = situation.chosen
                person_of[row] = i
                row += 1
        for arr in (attrs, available, chosen, person_of, s_cont, s_bin, t_counts):
            arr.setflags(write=False)
        return _PackedData(attrs, available, chosen, person_of, s_cont, s_bin, t_counts)

    def __eq__(self, other):
        if not isinstance(other, ChoiceDataset):
            return NotImplemented
        return (
            (self.alt_count, self.attr_count, self.cont_count, self.bin_count)
            == (other.alt_count, other.attr_count, other.cont_count, other.bin_count)
            and len(self.persons) == len(other.persons)
            and all(a == b for a, b in zip(self.persons, other.persons))
        )


@dataclass(frozen=True)
class StandardizationRecord:
    """Per-variable (mean, stddev) pairs for standardized continuous characteristics."""

    indices: tuple
    means: tuple
    stds: tuple

    def __post_init__(self):
        if not (len(self.indices) == len(self.means) == len(self.stds)):
            raise ValidationError("standardization record fields must have equal lengths")
        if any(s <= 0 or not np.isfinite(s) for s in self.stds):
            raise ValidationError("standardization stddev must be positive and finite")
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        object.__setattr__(self, "means", tuple(float(m) for m in self.means))
        object.__setattr__(self, "stds", tuple(float(s) for s in self.stds))

    def destandardize_mean(self, index, value):
        """Map a standardized mean back to the original scale for variable ``index``."""
        try:
            pos = self.indices.index(index)
        except ValueError:
            return float(value)
        return self.means[pos] + float(value) * self.stds[pos]


# ---------------------------------------------------------------------------
# schema and CSV ingestion


@dataclass(frozen=True)
class DatasetSchema:
    """Column mapping for the long-format CSV interchange."""

    person_col: str = "person_id"
    situation_col: str = "situation_id"
    alt_col: str = "alt_id"
    chosen_col: str = "chosen"
    attr_cols: tuple = ()
    cont_cols: tuple = ()
    bin_cols: tuple = ()
    avail_col: str = None

    def __post_init__(self):
        object.__setattr__(self, "attr_cols", tuple(self.attr_cols))
        object.__setattr__(self, "cont_cols", tuple(self.cont_cols))
        object.__setattr__(self, "bin_cols", tuple(self.bin_cols))
        if not self.attr_cols:
            raise ValidationError("schema needs at least one attribute column")

    @classmethod
    def from_mapping(cls, mapping, source="<schema>"):
        def need(key):
            if key not in mapping:
                raise ValidationError(f"{source}: missing schema key {key!r}")
            return mapping[key]

        return cls(
            person_col=need("person_col"),
            situation_col=need("situation_col"),
            alt_col=need("alt_col"),
            chosen_col=need("chosen_col"),
            attr_cols=kv.parse_strings(need("attr_cols")),
            cont_cols=kv.parse_strings(mapping.get("cont_cols", "")),
            bin_cols=kv.parse_strings(mapping.get("bin_cols", "")),
            avail_col=mapping.get("avail_col") or None,
        )

    @classmethod
    def from_file(cls, path):
        return cls.from_mapping(kv.read(path), source=str(path))

    def to_mapping(self):
        out = {
            "person_col": self.person_col,
            "situation_col": self.situation_col,
            "alt_col": self.alt_col,
            "chosen_col": self.chosen_col,
            "attr_cols": ",".join(self.attr_cols),
            "cont_cols": ",".join(self.cont_cols),
            "bin_cols": ",".join(self.bin_cols),
        }
        if self.avail_col:
            out["avail_col"] = self.avail_col
        return out

    def all_columns(self):
        cols = [self.person_col, self.situation_col, self.alt_col, self.chosen_col]
        if self.avail_col:
            cols.append(self.avail_col)
        cols.extend(self.attr_cols)
        cols.extend(self.cont_cols)
        cols.extend(self.bin_cols)
        return cols


def canonical_schema(ds):
    """Default column names for dumping a dataset that was built programmatically."""
    return DatasetSchema(
        attr_cols=tuple(f"attr_{i}" for i in range(ds.attr_count)),
        cont_cols=tuple(f"cont_{i}" for i in range(ds.cont_count)),
        bin_cols=tuple(f"bin_{i}" for i in range(ds.bin_count)),
        avail_col="available",
    )


def _coerce_ids(values):
    """Coerce an id column to int where possible, else keep the raw strings."""
    try:
        return [int(v) for v in values]
    except (TypeError, ValueError):
        return [str(v) for v in values]


def _parse_float(raw, column, line):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"line {line}: column {column!r} is not numeric: {raw!r}") from None


def _parse_flag(raw, column, line):
    value = _parse_float(raw, column, line)
    if value not in (0.0, 1.0):
        raise ValidationError(f"line {line}: column {column!r} must be 0 or 1, got {raw!r}")
    return value


def load_dataset(path, schema):
    """Read a long-format CSV into a :class:`ChoiceDataset`.

    Rows are grouped by person, then situation (order of first appearance),
    with alternatives sorted ascending by id, so loading is deterministic
    regardless of row order in the file.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in schema.all_columns() if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing column(s): {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise ValidationError(f"{path}: no data rows")

    person_ids = _coerce_ids(r[schema.person_col] for r in rows)
    situation_ids = _coerce_ids(r[schema.situation_col] for r in rows)
    alt_ids = _coerce_ids(r[schema.alt_col] for r in rows)

    # person -> situation -> list of (alt, line_no, row)
    groups = {}
    for line, (row, pid, sid, aid) in enumerate(
        zip(rows, person_ids, situation_ids, alt_ids), start=2
    ):
        groups.setdefault(pid, {}).setdefault(sid, []).append((aid, line, row))

    global_alts = sorted(set(alt_ids))
    persons = []
    for pid in sorted(groups):
        situations = []
        char_row = None
        char_line = None
        for sid, entries in groups[pid].items():
            entries.sort(key=lambda e: e[0])
            if [e[0] for e in entries] != global_alts:
                raise ValidationError(
                    f"person {pid!r}, situation {sid!r}: alternatives do not match "
                    f"the global choice set {global_alts!r}"
                )
            attrs = np.empty((len(global_alts), len(schema.attr_cols)))
            available = np.ones(len(global_alts), dtype=bool)
            chosen = None
            for j, (aid, line, row) in enumerate(entries):
                for p, col in enumerate(schema.attr_cols):
                    attrs[j, p] = _parse_float(row[col], col, line)
                if schema.avail_col:
                    available[j] = bool(_parse_flag(row[schema.avail_col], schema.avail_col, line))
                if _parse_flag(row[schema.chosen_col], schema.chosen_col, line) == 1.0:
                    if chosen is not None:
                        raise ValidationError(
                            f"person {pid!r}, situation {sid!r}: more than one chosen alternative"
                        )
                    chosen = j
                if char_row is None:
                    char_row, char_line = row, line
                else:
                    for col in itertools.chain(schema.cont_cols, schema.bin_cols):
                        if row[col] != char_row[col]:
                            raise ValidationError(
                                f"person {pid!r}: characteristic {col!r} varies across rows "
                                f"(lines {char_line} and {line})"
                            )
            if chosen is None:
                raise ValidationError(
                    f"person {pid!r}, situation {sid!r}: no chosen alternative"
                )
            if not available[chosen]:
                raise ValidationError(
                    f"person {pid!r}, situation {sid!r}: chosen unavailable"
                )
            situations.append(ChoiceSituation(attrs=attrs, available=available, chosen=chosen))
        s_cont = np.array(
            [_parse_float(char_row[c], c, char_line) for c in schema.cont_cols], dtype=float
        )
        s_bin = np.array(
            [_parse_flag(char_row[c], c, char_line) for c in schema.bin_cols], dtype=float
        )
        persons.append(
            PersonRecord(id=pid, s_cont=s_cont, s_bin=s_bin, situations=tuple(situations))
        )
    return ChoiceDataset.build(persons)


def save_dataset(ds, path, schema=None, standardization=None):
    """Write the canonical long-CSV dump plus a key-value sidecar (``<path>.meta``).

    ``load_dataset(path, schema)`` on the result reproduces an equal dataset.
    """
    schema = schema or canonical_schema(ds)
    if len(schema.attr_cols) != ds.attr_count:
        raise ValidationError("schema attribute columns do not match the dataset")
    if len(schema.cont_cols) != ds.cont_count or len(schema.bin_cols) != ds.bin_count:
        raise ValidationError("schema characteristic columns do not match the dataset")
    avail_col = schema.avail_col or "available"
    header = [schema.person_col, schema.situation_col, schema.alt_col, schema.chosen_col,
              avail_col, *schema.attr_cols, *schema.cont_cols, *schema.bin_cols]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for person in ds.persons:
            chars = [repr(float(v)) for v in person.s_cont] + [
                repr(int(v)) for v in person.s_bin
            ]
            for sid, situation in enumerate(person.situations):
                for j in range(ds.alt_count):
                    writer.writerow(
                        [person.id, sid, j, int(j == situation.chosen),
                         int(situation.available[j]),
                         *[repr(float(v)) for v in situation.attrs[j]],
                         *chars]
                    )
    meta = {
        "format": "lcmix-dataset/1",
        "persons": ds.n_persons,
        "situations": ds.n_situations,
        "alt_count": ds.alt_count,
        "attr_count": ds.attr_count,
        "cont_count": ds.cont_count,
        "bin_count": ds.bin_count,
    }
    meta.update(DatasetSchema(
        person_col=schema.person_col, situation_col=schema.situation_col,
        alt_col=schema.alt_col, chosen_col=schema.chosen_col,
        attr_cols=schema.attr_cols, cont_cols=schema.cont_cols,
        bin_cols=schema.bin_cols, avail_col=avail_col,
    ).to_mapping())
    if standardization is not None:
        meta["standardize_indices"] = list(standardization.indices)
        meta["standardize_means"] = list(standardization.means)
        meta["standardize_stds"] = list(standardization.stds)
    kv.write(f"{path}.meta", meta)


# ---------------------------------------------------------------------------
# standardization


def _replace_cont(ds, s_cont_new):
    persons = tuple(
        PersonRecord(id=p.id, s_cont=s_cont_new[i], s_bin=p.s_bin, situations=p.situations)
        for i, p in enumerate(ds.persons)
    )
    return ChoiceDataset(
        persons=persons, alt_count=ds.alt_count, attr_count=ds.attr_count,
        cont_count=ds.cont_count, bin_count=ds.bin_count,
    )


def standardize(ds, var_indices):
    """Center/scale the selected continuous characteristics to mean 0, sd 1.

    Returns the transformed dataset and a :class:`StandardizationRecord`
    holding the inverse transform.  The sample standard deviation uses the
    N-1 normalization; a zero-variance column is an error.
    """
    var_indices = [int(i) for i in var_indices]
    for i in var_indices:
        if not 0 <= i < ds.cont_count:
            raise ValidationError(f"standardization index {i} out of range")
    s_cont = np.array(ds.packed.s_cont)
    means, stds = [], []
    for i in var_indices:
        col = s_cont[:, i]
        mean = float(np.mean(col))
        std = float(np.std(col, ddof=1)) if col.size > 1 else 0.0
        if not np.isfinite(std) or std <= 0.0:
            raise ValidationError(f"continuous characteristic {i} has zero variance")
        s_cont[:, i] = (col - mean) / std
        means.append(mean)
        stds.append(std)
    record = StandardizationRecord(indices=tuple(var_indices), means=tuple(means), stds=tuple(stds))
    return _replace_cont(ds, s_cont), record


def apply_standardization(ds, record):
    """Apply a stored (training-set) standardization to another dataset."""
    s_cont = np.array(ds.packed.s_cont)
    for i, mean, std in zip(record.indices, record.means, record.stds):
        if not 0 <= i < ds.cont_count:
            raise ValidationError(f"standardization index {i} out of range for this dataset")
        s_cont[:, i] = (s_cont[:, i] - mean) / std
    return _replace_cont(ds, s_cont)


def invert_standardization(ds, record):
    """Undo :func:`apply_standardization`; round-trips within float precision."""
    s_cont = np.array(ds.packed.s_cont)
    for i, mean, std in zip(record.indices, record.means, record.stds):
        s_cont[:, i] = s_cont[:, i] * std + mean
    return _replace_cont(ds, s_cont)


# ---------------------------------------------------------------------------
# choice-set enumeration, folds, subsetting


def enumerate_count_alternatives(total, modes):
    """All tuples of ``modes`` non-negative counts summing to ``total``.

    Lexicographically ascending; the number of tuples is
    C(total + modes - 1, modes - 1).
    """
    total = int(total)
    modes = int(modes)
    if total < 0:
        raise ValidationError("total must be non-negative")
    if modes < 1:
        raise ValidationError("modes must be positive")
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append((*prefix, remaining))
            return
        for v in range(remaining + 1):
            rec((*prefix, v), remaining - v, slots - 1)

    rec((), total, modes)
    return out


def split_folds(ds, k, seed):
    """Partition person indices into k folds whose sizes differ by at most 1.

    The split is by person (a person's situations are never separated) and
    deterministic given the seed.
    """
    n = ds.n_persons
    k = int(k)
    if k < 2 or k > n:
        raise ValidationError(f"fold count {k} out of range for {n} persons")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(np.sort(perm[start:start + size]))
        start += size
    return tuple(folds)


def subset_persons(ds, indices):
    """Dataset restricted to the given person indices (kept in the given order)."""
    persons = tuple(ds.persons[int(i)] for i in indices)
    if not persons:
        raise ValidationError("person subset is empty")
    return ChoiceDataset(
        persons=persons, alt_count=ds.alt_count, attr_count=ds.attr_count,
        cont_count=ds.cont_count, bin_count=ds.bin_count,
    )


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class UniformAttributeSampler:
    """Independent uniform draws for the alternative attributes.

    Carries the choice-set dimensions so a parameter set plus a sampler
    fully describes the generated design.
    """

    alt_count: int
    attr_count: int
    low: float = -1.0
    high: float = 1.0

    def sample(self, rng, n_situations):
        return rng.uniform(
            self.low, self.high, size=(n_situations, self.alt_count, self.attr_count)
        )


def simulate_dataset(true_params, n_persons, t_per_person, attr_sampler, seed):
    """Draw a synthetic panel from a full generative parameter set.

    For each person a class is drawn from the mixing coefficients, the
    continuous characteristics from that class's Gaussian, the binary ones
    from the Bernoulli means, and every choice from the class-specific
    logit over sampled attributes.  Bit-identical output for a given seed.
    """
    true_params.validate()
    n_persons = int(n_persons)
    t_per_person = int(t_per_person)
    if n_persons < 1:
        raise ValidationError("n_persons must be positive")
    if t_per_person < 1:
        raise ValidationError("t_per_person must be positive")
    mem = true_params.membership
    betas = np.asarray(true_params.betas, dtype=float)
    k_classes = mem.n_classes
    d_c, d_d = mem.cont_dim, mem.bin_dim
    j_alts = attr_sampler.alt_count
    p_attrs = attr_sampler.attr_count
    if j_alts < 2:
        raise ValidationError("attribute sampler must produce at least two alternatives")
    if betas.shape[1] != p_attrs:
        raise ValidationError(
            f"attribute sampler produces {p_attrs} attributes but betas have {betas.shape[1]}"
        )

    rng = np.random.default_rng(seed)
    classes = rng.choice(k_classes, size=n_persons, p=mem.pi)
    z = rng.standard_normal((n_persons, d_c))
    s_cont = np.empty((n_persons, d_c))
    covariances = mem.covariances()
    for k in range(k_classes):
        mask = classes == k
        if d_c:
            chol = np.linalg.cholesky(covariances[k])
            s_cont[mask] = mem.mu_c[k] + z[mask] @ chol.T
    s_bin = (rng.random((n_persons, d_d)) < mem.mu_d[classes]).astype(float)

    s_total = n_persons * t_per_person
    attrs = np.asarray(attr_sampler.sample(rng, s_total), dtype=float)
    if attrs.shape != (s_total, j_alts, p_attrs):
        raise ValidationError("attribute sampler returned the wrong shape")
    person_of = np.repeat(np.arange(n_persons), t_per_person)
    utilities = np.einsum("sjp,sp->sj", attrs, betas[classes[person_of]])
    utilities -= utilities.max(axis=1, keepdims=True)
    probs = np.exp(utilities)
    probs /= probs.sum(axis=1, keepdims=True)
    draws = rng.random(s_total)
    chosen = (probs.cumsum(axis=1) < draws[:, None]).sum(axis=1)
    chosen = np.minimum(chosen, j_alts - 1)

    available = np.ones(j_alts, dtype=bool)
    persons = []
    row = 0
    for i in range(n_persons):
        situations = []
        for _ in range(t_per_person):
            situations.append(
                ChoiceSituation(attrs=attrs[row], available=available.copy(), chosen=int(chosen[row]))
            )
            row += 1
        persons.append(
            PersonRecord(
                id=i,
                s_cont=s_cont[i] if d_c else np.zeros(0),
                s_bin=s_bin[i] if d_d else np.zeros(0),
                situations=tuple(situations),
            )
        )
    return ChoiceDataset.build(persons)
