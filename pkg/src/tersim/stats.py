"""Concordance statistics for bedside-vs-remote exam campaigns.

Pearson correlation with its t-based p-value, Cohen's kappa (simple and
linear-weighted) with asymptotic 95% CI, signed relative errors,
absolute-difference buckets, the paired t-test, ICC(2,1), and the campaign
report aggregating all of it over ExamRecord pairs.

Student-t tail probabilities go through the regularized incomplete beta
function (scipy.special.betainc).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import betainc

GRADES = ("none", "segmentary", "diffuse")
Z95 = 1.959963984540054


class StatsError(Exception):
    pass


class TooFewSamplesError(StatsError):
    pass


class DegenerateVarianceError(StatsError):
    pass


class UndefinedKappaError(StatsError):
    pass


class DivisionDegenerateError(StatsError):
    pass


class UnpairedRecordError(StatsError):
    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(f"patients without both arms: {self.ids}")


def student_t_sf(t: float, df: int) -> float:
    """P(T > t) for Student t with df degrees of freedom, t >= 0."""
    if t < 0:
        return 1.0 - student_t_sf(-t, df)
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return 0.5 * float(betainc(df / 2.0, 0.5, x))


def two_sided_p(t: float, df: int) -> float:
    return min(1.0, 2.0 * student_t_sf(abs(t), df))


# ---------------------------------------------------------------------------

def pearson_r(pairs) -> dict:
    """Sample Pearson correlation with a two-sided t-test p-value."""
    xs = np.array([p[0] for p in pairs], dtype=float)
    ys = np.array([p[1] for p in pairs], dtype=float)
    n = len(xs)
    if n < 3:
        raise TooFewSamplesError(f"need at least 3 pairs, got {n}")
    sx = xs - xs.mean()
    sy = ys - ys.mean()
    vx = float(sx @ sx)
    vy = float(sy @ sy)
    if vx == 0.0 or vy == 0.0:
        raise DegenerateVarianceError("zero variance in one coordinate")
    r = float(sx @ sy) / math.sqrt(vx * vy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = two_sided_p(t, n - 2)
    return {"r": r, "p_value": p, "n": n}


def _kappa_core(table: np.ndarray):
    n = float(table.sum())
    p = table / n
    po = float(np.trace(p))
    rows = p.sum(axis=1)
    cols = p.sum(axis=0)
    pe = float(rows @ cols)
    return p, po, rows, cols, pe, n


def cohen_kappa(table) -> dict:
    """Simple (unweighted) Cohen's kappa with asymptotic 95% CI.

    The standard error is the Fleiss-Cohen-Everitt large-sample form for
    simple kappa.
    """
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[0] != table.shape[1] or table.shape[0] < 2:
        raise ValueError("table must be k x k with k >= 2")
    if table.sum() < 1:
        raise TooFewSamplesError("empty table")
    p, po, rows, cols, pe, n = _kappa_core(table)
    if pe >= 1.0 - 1e-15:
        raise UndefinedKappaError("expected agreement is 1; kappa undefined")
    kappa = (po - pe) / (1.0 - pe)

    k = table.shape[0]
    a = 0.0
    for i in range(k):
        a += p[i, i] * ((1.0 - pe) - (cols[i] + rows[i]) * (1.0 - po)) ** 2
    b = 0.0
    for i in range(k):
        for j in range(k):
            if i != j:
                b += p[i, j] * (cols[i] + rows[j]) ** 2
    b *= (1.0 - po) ** 2
    c = (po * pe - 2.0 * pe + po) ** 2
    var = (a + b - c) / (n * (1.0 - pe) ** 4)
    se = math.sqrt(max(var, 0.0))
    return {"kappa": kappa, "se": se,
            "ci95": (kappa - Z95 * se, kappa + Z95 * se)}


def weighted_kappa(table, weights: str = "linear") -> dict:
    """Linearly (or quadratically) weighted kappa with asymptotic 95% CI.

    With linear weights, one-level mismatches on an ordinal scale count as
    partial agreement; this matches how ordinal gradings are usually
    reported.
    """
    table = np.asarray(table, dtype=float)
    k = table.shape[0]
    if table.ndim != 2 or table.shape[1] != k or k < 2:
        raise ValueError("table must be k x k with k >= 2")
    if table.sum() < 1:
        raise TooFewSamplesError("empty table")
    idx = np.arange(k)
    dist = np.abs(idx[:, None] - idx[None, :]) / (k - 1)
    if weights == "linear":
        w = 1.0 - dist
    elif weights == "quadratic":
        w = 1.0 - dist ** 2
    else:
        raise ValueError("weights must be 'linear' or 'quadratic'")
    p, _, rows, cols, _, n = _kappa_core(table)
    po_w = float((w * p).sum())
    pe_w = float(rows @ w @ cols)
    if pe_w >= 1.0 - 1e-15:
        raise UndefinedKappaError("expected weighted agreement is 1")
    kappa = (po_w - pe_w) / (1.0 - pe_w)
    # Fleiss-Cohen-Everitt variance for weighted kappa
    wbar_i = w @ cols          # row-wise expected weight
    wbar_j = rows @ w          # column-wise expected weight
    term = 0.0
    for i in range(k):
        for j in range(k):
            term += p[i, j] * (w[i, j] * (1.0 - pe_w)
                               - (wbar_i[i] + wbar_j[j]) * (1.0 - po_w)) ** 2
    var = (term - (po_w * pe_w - 2.0 * pe_w + po_w) ** 2) / (n * (1.0 - pe_w) ** 4)
    se = math.sqrt(max(var, 0.0))
    return {"kappa": kappa, "se": se,
            "ci95": (kappa - Z95 * se, kappa + Z95 * se)}


def grade_table(pairs) -> np.ndarray:
    """3x3 confusion counts from (bedside, remote) grade pairs."""
    table = np.zeros((3, 3), dtype=int)
    for bedside, remote in pairs:
        table[GRADES.index(bedside), GRADES.index(remote)] += 1
    return table


@dataclass
class RelativeErrors:
    errors: list[float]

    @property
    def median(self) -> float:
        return float(np.median(self.errors))

    @property
    def min(self) -> float:
        return float(np.min(self.errors))

    @property
    def max(self) -> float:
        return float(np.max(self.errors))

    def frac_below(self, t: float) -> float:
        """Fraction of |errors| strictly below t."""
        arr = np.abs(self.errors)
        return float(np.count_nonzero(arr < t)) / len(self.errors)


def relative_errors(pairs) -> RelativeErrors:
    """Signed relative errors (remote - bedside)/bedside per pair."""
    errs = []
    for bedside, remote in pairs:
        if bedside == 0:
            raise DivisionDegenerateError("bedside measurement of 0")
        errs.append((remote - bedside) / bedside)
    if not errs:
        raise TooFewSamplesError("no pairs")
    return RelativeErrors(errs)


def abs_diff_buckets(pairs, cuts=(0.004, 0.010)) -> dict:
    """Classify |remote - bedside| into [0,c1), [c1,c2], (c2,inf).

    The lower boundary of the middle bucket is closed: a difference of
    exactly c1 counts as "between c1 and c2".
    """
    c1, c2 = cuts
    counts = [0, 0, 0]
    for bedside, remote in pairs:
        d = abs(remote - bedside)
        if d < c1:
            counts[0] += 1
        elif d <= c2:
            counts[1] += 1
        else:
            counts[2] += 1
    total = sum(counts)
    pct = [100.0 * c / total if total else 0.0 for c in counts]
    return {"cuts": list(cuts), "counts": counts, "percent": pct, "n": total}


def paired_t_test(pairs) -> dict:
    """Two-sided paired t-test on d = remote - bedside."""
    d = np.array([remote - bedside for bedside, remote in pairs], dtype=float)
    n = len(d)
    if n < 2:
        raise TooFewSamplesError(f"need at least 2 pairs, got {n}")
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise DegenerateVarianceError("zero variance of differences")
    t = float(d.mean()) / (sd / math.sqrt(n))
    return {"t": t, "p_value": two_sided_p(t, n - 1),
            "mean_diff": float(d.mean()), "n": n}


def icc_2_1(pairs) -> float:
    """ICC(2,1), two-way random effects, absolute agreement, single rater."""
    x = np.array(pairs, dtype=float)
    n, k = x.shape
    if n < 2:
        raise TooFewSamplesError("need at least 2 subjects")
    grand = x.mean()
    row_means = x.mean(axis=1)
    col_means = x.mean(axis=0)
    msr = k * float(((row_means - grand) ** 2).sum()) / (n - 1)
    msc = n * float(((col_means - grand) ** 2).sum()) / (k - 1)
    sse = float(((x - row_means[:, None] - col_means[None, :] + grand) ** 2).sum())
    mse = sse / ((n - 1) * (k - 1))
    denom = msr + (k - 1) * mse + k * (msc - mse) / n
    if denom == 0.0:
        raise DegenerateVarianceError("no variance at all")
    return (msr - mse) / denom


# ---------------------------------------------------------------------------
# exam records and the campaign report


@dataclass
class ExamRecord:
    patient_id: str
    arm: str                        # "bedside" | "remote"
    aaa_detected: bool
    ap_diameter: float | None       # meters; None when absent
    thrombus: bool | None
    iliac_left: float | None
    iliac_right: float | None
    grade: str
    duration: float                 # seconds
    quality_score: float
    acceptance_score: float

    def __post_init__(self):
        if self.arm not in ("bedside", "remote"):
            raise ValueError(f"arm must be bedside|remote, not {self.arm}")
        if self.grade not in GRADES:
            raise ValueError(f"unknown grade {self.grade}")
        for score in (self.quality_score, self.acceptance_score):
            if not 0.0 <= score <= 100.0:
                raise ValueError("scores must be within [0, 100]")
        for d in (self.ap_diameter, self.iliac_left, self.iliac_right):
            if d is not None and d <= 0:
                raise ValueError("diameters must be positive when present")


CSV_COLUMNS = [
    "patient_id", "arm", "aaa_detected", "ap_diameter_m", "thrombus",
    "iliac_left_m", "iliac_right_m", "grade", "duration_s",
    "quality_score", "acceptance_score",
]


def _fmt_opt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    return repr(float(v))


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([
            r.patient_id, r.arm, "1" if r.aaa_detected else "0",
            _fmt_opt(r.ap_diameter), _fmt_opt(r.thrombus),
            _fmt_opt(r.iliac_left), _fmt_opt(r.iliac_right),
            r.grade, repr(float(r.duration)),
            repr(float(r.quality_score)), repr(float(r.acceptance_score)),
        ])
    return buf.getvalue()


class CsvSchemaError(StatsError):
    pass


def records_from_csv(text: str) -> list[ExamRecord]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CsvSchemaError("empty file: header row is mandatory") from None
    if header != CSV_COLUMNS:
        raise CsvSchemaError(f"header row 1 must be {CSV_COLUMNS}, got {header}")

    def opt_float(v, row, col):
        if v == "":
            return None
        try:
            return float(v)
        except ValueError:
            raise CsvSchemaError(f"row {row}, column {col}: not a number: {v!r}") from None

    def req_bool(v, row, col):
        if v not in ("0", "1"):
            raise CsvSchemaError(f"row {row}, column {col}: expected 0 or 1, got {v!r}")
        return v == "1"

    records = []
    for i, cells in enumerate(reader, start=2):
        if len(cells) != len(CSV_COLUMNS):
            raise CsvSchemaError(f"row {i}: expected {len(CSV_COLUMNS)} columns")
        try:
            rec = ExamRecord(
                patient_id=cells[0], arm=cells[1],
                aaa_detected=req_bool(cells[2], i, "aaa_detected"),
                ap_diameter=opt_float(cells[3], i, "ap_diameter_m"),
                thrombus=None if cells[4] == "" else req_bool(cells[4], i, "thrombus"),
                iliac_left=opt_float(cells[5], i, "iliac_left_m"),
                iliac_right=opt_float(cells[6], i, "iliac_right_m"),
                grade=cells[7],
                duration=float(cells[8]),
                quality_score=float(cells[9]),
                acceptance_score=float(cells[10]))
        except (ValueError, CsvSchemaError) as exc:
            if isinstance(exc, CsvSchemaError):
                raise
            raise CsvSchemaError(f"row {i}: {exc}") from None
        records.append(rec)
    return records


@dataclass
class StudyReport:
    n_patients: int
    aaa: dict
    thrombus: dict
    aorta_correlation: dict | None
    iliac_correlation: dict | None
    relative_error_summary: dict
    diff_buckets: dict
    grade_kappa: dict | None
    duration_test: dict | None
    mean_scores: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_table(self) -> str:
        lines = [
            f"patients                 {self.n_patients}",
            f"AAA detected             bedside {self.aaa['bedside']} / "
            f"remote {self.aaa['remote']} / concordant {self.aaa['concordant']}",
            f"thrombus detected        bedside {self.thrombus['bedside']} / "
            f"remote {self.thrombus['remote']} / concordant {self.thrombus['concordant']}",
        ]
        if self.aorta_correlation:
            lines.append(
                f"aorta Pearson r          {self.aorta_correlation['r']:.4f} "
                f"(p = {self.aorta_correlation['p_value']:.2e})")
        if self.iliac_correlation:
            lines.append(
                f"iliac Pearson r          {self.iliac_correlation['r']:.4f} "
                f"(p = {self.iliac_correlation['p_value']:.2e})")
        res = self.relative_error_summary
        lines.append(
            f"relative errors          median {res['median']:+.4f} "
            f"range [{res['min']:+.4f}, {res['max']:+.4f}]")
        db = self.diff_buckets
        lines.append(
            f"abs diff buckets (mm)    <4: {db['counts'][0]}  4-10: {db['counts'][1]}"
            f"  >10: {db['counts'][2]}")
        if self.grade_kappa:
            gk = self.grade_kappa
            lines.append(
                f"grade kappa              {gk['kappa']:.3f} "
                f"(95% CI {gk['ci95'][0]:.3f}..{gk['ci95'][1]:.3f})")
        if self.duration_test:
            dt = self.duration_test
            lines.append(
                f"duration paired t        t = {dt['t']:.3f}, p = {dt['p_value']:.3e}, "
                f"mean diff {dt['mean_diff']:+.1f} s")
        ms = self.mean_scores
        lines.append(
            f"mean quality             bedside {ms['quality_bedside']:.1f} / "
            f"remote {ms['quality_remote']:.1f}")
        lines.append(f"mean acceptance          {ms['acceptance']:.1f}")
        return "\n".join(lines) + "\n"


def campaign_report(records) -> StudyReport:
    """Aggregate paired bedside/remote ExamRecords into a StudyReport."""
    by_patient: dict[str, dict[str, ExamRecord]] = {}
    for r in records:
        by_patient.setdefault(r.patient_id, {})[r.arm] = r
    unpaired = sorted(pid for pid, arms in by_patient.items()
                      if set(arms) != {"bedside", "remote"})
    if unpaired or not by_patient:
        raise UnpairedRecordError(unpaired or ["<empty input>"])

    pids = sorted(by_patient)
    beds = [by_patient[p]["bedside"] for p in pids]
    rems = [by_patient[p]["remote"] for p in pids]

    def concordance(flags_b, flags_r):
        return {
            "bedside": sum(bool(b) for b in flags_b),
            "remote": sum(bool(r) for r in flags_r),
            "concordant": sum(1 for b, r in zip(flags_b, flags_r)
                              if bool(b) == bool(r)),
        }

    aorta_pairs = [(b.ap_diameter, r.ap_diameter)
                   for b, r in zip(beds, rems)
                   if b.ap_diameter is not None and r.ap_diameter is not None]
    iliac_pairs = []
    for b, r in zip(beds, rems):
        if b.iliac_left is not None and r.iliac_left is not None:
            iliac_pairs.append((b.iliac_left, r.iliac_left))
        if b.iliac_right is not None and r.iliac_right is not None:
            iliac_pairs.append((b.iliac_right, r.iliac_right))

    rel = relative_errors(aorta_pairs)
    duration_pairs = [(b.duration, r.duration) for b, r in zip(beds, rems)]
    try:
        dur_test = paired_t_test(duration_pairs)
    except (TooFewSamplesError, DegenerateVarianceError):
        dur_test = None
    try:
        aorta_corr = pearson_r(aorta_pairs)
    except (TooFewSamplesError, DegenerateVarianceError):
        aorta_corr = None
    try:
        iliac_corr = pearson_r(iliac_pairs) if len(iliac_pairs) >= 3 else None
    except DegenerateVarianceError:
        iliac_corr = None
    try:
        kappa = cohen_kappa(grade_table(
            [(b.grade, r.grade) for b, r in zip(beds, rems)]))
    except UndefinedKappaError:
        kappa = None

    return StudyReport(
        n_patients=len(pids),
        aaa=concordance([b.aaa_detected for b in beds],
                        [r.aaa_detected for r in rems]),
        thrombus=concordance([bool(b.thrombus) for b in beds],
                             [bool(r.thrombus) for r in rems]),
        aorta_correlation=aorta_corr,
        iliac_correlation=iliac_corr,
        relative_error_summary={
            "median": rel.median, "min": rel.min, "max": rel.max,
            "frac_below_5pct": rel.frac_below(0.05),
            "frac_below_15pct": rel.frac_below(0.15),
            "errors": list(rel.errors),
        },
        diff_buckets=abs_diff_buckets(aorta_pairs),
        grade_kappa=kappa,
        duration_test=dur_test,
        mean_scores={
            "quality_bedside": float(np.mean([b.quality_score for b in beds])),
            "quality_remote": float(np.mean([r.quality_score for r in rems])),
            "acceptance": float(np.mean([r.acceptance_score for r in rems])),
        },
    )
