"""Post-hoc statistics over episode traces: correlations, confidence, cost, charts."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from lac.core import DecisionRecord, EpisodeResult, record_from_dict

SERIES = ("log_p_success", "log_p_failure", "q")
CASES = ("BOTH_AGREE", "PRIOR_ONLY", "Q_ONLY", "NEITHER")


class UndefinedCorrelation(ValueError):
    """Pearson's r is undefined for a constant series."""


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("series must be 1-d and of equal length")
    if len(x) < 2:
        raise UndefinedCorrelation("need at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    # product of roots, since sxx * syy can underflow
    denom = math.sqrt(sxx) * math.sqrt(syy)
    if denom == 0.0:
        raise UndefinedCorrelation("series has zero variance")
    r = float(dx @ dy) / denom
    return max(-1.0, min(1.0, r))


# --------------------------------------------------------------------------
# trace loading


@dataclass
class TraceSet:
    episodes: list[EpisodeResult] = field(default_factory=list)
    skipped: int = 0
    decision_lines: int = 0


def load_traces(path: str | Path) -> TraceSet:
    """Episodes from a JSONL trace; malformed lines are skipped and counted.

    Standalone decision lines (as streamed by ``lac run``) are counted but
    not used; the episode line that follows them carries the same records.
    """
    out = TraceSet()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                rec = record_from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError):
                out.skipped += 1
                continue
            if isinstance(rec, DecisionRecord):
                out.decision_lines += 1
            else:
                out.episodes.append(rec)
    return out


# --------------------------------------------------------------------------
# Q versus time


@dataclass(frozen=True)
class TrajectoryCorrelation:
    label: str
    task: str
    seed: int | None
    success: bool
    steps: int
    r: dict[str, float | None]


@dataclass(frozen=True)
class SeriesStats:
    mean: float | None
    std: float | None
    n: int


@dataclass(frozen=True)
class CorrelationReport:
    trajectories: tuple[TrajectoryCorrelation, ...]
    # outcome ("success"/"failure") -> series -> stats
    aggregate: dict[str, dict[str, SeriesStats]]
    excluded_short: int = 0
    excluded_no_beliefs: int = 0
    # series -> trajectories dropped for zero variance
    excluded_constant: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "trajectories": [asdict(t) for t in self.trajectories],
            "aggregate": {g: {s: asdict(v) for s, v in row.items()} for g, row in self.aggregate.items()},
            "excluded_short": self.excluded_short,
            "excluded_no_beliefs": self.excluded_no_beliefs,
            "excluded_constant": dict(self.excluded_constant),
        }


def _stats(values: list[float]) -> SeriesStats:
    if not values:
        return SeriesStats(None, None, 0)
    a = np.asarray(values)
    return SeriesStats(float(a.mean()), float(a.std()), len(values))


def chosen_series(ep: EpisodeResult) -> dict[str, list[float]] | None:
    """Per-step raw log-masses and Q of the chosen candidate, or None without beliefs."""
    out: dict[str, list[float]] = {s: [] for s in SERIES}
    for rec in ep.records:
        c = rec.chosen
        if c.belief is None:
            return None
        out["log_p_success"].append(math.log(c.belief.raw_success))
        out["log_p_failure"].append(math.log(c.belief.raw_failure))
        out["q"].append(c.q_value)
    return out


def correlation_report(episodes: Iterable[EpisodeResult]) -> CorrelationReport:
    rows, short, no_beliefs = [], 0, 0
    constant = {s: 0 for s in SERIES}
    for ep in episodes:
        if len(ep.records) < 2:
            short += 1
            continue
        series = chosen_series(ep)
        if series is None:
            no_beliefs += 1
            continue
        t = list(range(len(ep.records)))
        r: dict[str, float | None] = {}
        for name in SERIES:
            try:
                r[name] = pearson(t, series[name])
            except UndefinedCorrelation:
                r[name] = None
                constant[name] += 1
        rows.append(TrajectoryCorrelation(ep.config_label, ep.task, ep.seed, ep.success, len(ep.records), r))
    aggregate = {}
    for group, flag in (("success", True), ("failure", False)):
        aggregate[group] = {
            s: _stats([row.r[s] for row in rows if row.success is flag and row.r[s] is not None])
            for s in SERIES
        }
    return CorrelationReport(tuple(rows), aggregate, short, no_beliefs, constant)


# --------------------------------------------------------------------------
# confidence of the prior, the critic and the improved policy


@dataclass(frozen=True)
class DecisionConfidence:
    prior_gap: float
    q_gap: float
    improved_gap: float
    case: str


@dataclass(frozen=True)
class CaseRow:
    case: str
    count: int
    proportion: float
    mean_prior_gap: float | None
    mean_q_gap: float | None
    mean_improved_gap: float | None


@dataclass(frozen=True)
class ConfidenceReport:
    rows: tuple[CaseRow, ...]
    decisions: int
    episodes: int
    excluded_single_candidate: int = 0
    excluded_no_beliefs: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": [asdict(r) for r in self.rows],
            "decisions": self.decisions,
            "episodes": self.episodes,
            "excluded_single_candidate": self.excluded_single_candidate,
            "excluded_no_beliefs": self.excluded_no_beliefs,
        }


def _top_gap(values: Sequence[float]) -> float:
    top = sorted(values, reverse=True)
    return top[0] - top[1]


def classify(record: DecisionRecord) -> DecisionConfidence:
    """Gaps between each model's top two scores, and which models back the choice.

    A model backs the chosen action when that action attains the model's
    maximum score, so the case is independent of candidate order.
    """
    if len(record.candidates) < 2:
        raise ValueError("confidence needs at least two candidates")
    priors = [c.prior_logprob for c in record.candidates]
    qs = [c.q_value for c in record.candidates]
    chosen = record.improved.chosen_index
    prior_backs = priors[chosen] == max(priors)
    q_backs = qs[chosen] == max(qs)
    case = {
        (True, True): "BOTH_AGREE",
        (True, False): "PRIOR_ONLY",
        (False, True): "Q_ONLY",
        (False, False): "NEITHER",
    }[(prior_backs, q_backs)]
    return DecisionConfidence(
        _top_gap(priors), _top_gap(qs), _top_gap(record.improved.candidate_probs), case
    )


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def confidence_report(episodes: Iterable[EpisodeResult]) -> ConfidenceReport:
    per_case: dict[str, list[DecisionConfidence]] = {c: [] for c in CASES}
    single = no_beliefs = 0
    contributing = set()
    for i, ep in enumerate(episodes):
        for rec in ep.records:
            if len(rec.candidates) < 2:
                single += 1
                continue
            if any(c.belief is None for c in rec.candidates):
                no_beliefs += 1
                continue
            d = classify(rec)
            per_case[d.case].append(d)
            contributing.add(i)
    total = sum(len(v) for v in per_case.values())
    rows = tuple(
        CaseRow(
            case,
            len(items),
            len(items) / total if total else 0.0,
            _mean([d.prior_gap for d in items]),
            _mean([d.q_gap for d in items]),
            _mean([d.improved_gap for d in items]),
        )
        for case, items in per_case.items()
    )
    return ConfidenceReport(rows, total, len(contributing), single, no_beliefs)


# --------------------------------------------------------------------------
# cost


@dataclass(frozen=True)
class CostRow:
    label: str
    group: str  # "all", "success" or "failure"
    episodes: int
    mean_steps: float
    mean_tokens: float


def cost_report(episodes: Iterable[EpisodeResult]) -> list[CostRow]:
    by_label: dict[str, list[EpisodeResult]] = {}
    for ep in episodes:
        by_label.setdefault(ep.config_label, []).append(ep)
    rows = []
    for label, eps in by_label.items():
        for group, members in (
            ("all", eps),
            ("success", [e for e in eps if e.success]),
            ("failure", [e for e in eps if not e.success]),
        ):
            if members:
                rows.append(CostRow(
                    label, group, len(members),
                    sum(e.steps_used for e in members) / len(members),
                    sum(e.tokens_used for e in members) / len(members),
                ))
    return rows


def success_table(episodes: Iterable[EpisodeResult]) -> dict[str, dict[str, float]]:
    """config label -> task -> success rate."""
    counts: dict[str, dict[str, list[int]]] = {}
    for ep in episodes:
        cell = counts.setdefault(ep.config_label, {}).setdefault(ep.task, [0, 0])
        cell[0] += ep.success
        cell[1] += 1
    return {label: {task: w / n for task, (w, n) in tasks.items()} for label, tasks in counts.items()}


# --------------------------------------------------------------------------
# charts


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


PALETTE = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948")


def grouped_bar_svg(
    title: str,
    groups: Sequence[str],
    series: Sequence[str],
    values: Sequence[Sequence[float]],
    errors: Sequence[Sequence[float]] | None = None,
) -> str:
    """Self-contained SVG with one cluster of bars per group.

    ``values[g][s]`` is the bar for group g and series s. ``errors`` gives
    the half-length of each error bar in data units. The root element
    records the vertical scale (pixels per data unit) as ``data-scale``.
    """
    width, height, pad, plot_h = 640, 360, 50, 240
    flat = [v for row in values for v in row]
    if errors is not None:
        flat += [v + e for row, erow in zip(values, errors) for v, e in zip(row, erow)]
        flat += [v - e for row, erow in zip(values, errors) for v, e in zip(row, erow)]
    hi, lo = max(flat + [0.0]), min(flat + [0.0])
    if hi == lo:
        hi = lo + 1.0
    scale = plot_h / (hi - lo)
    zero_y = pad + hi * scale
    slot = (width - 2 * pad) / max(len(groups), 1)
    bar_w = slot * 0.8 / max(len(series), 1)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" data-scale="{scale:.6f}">',
        f'<text x="{width / 2:.2f}" y="24" text-anchor="middle" font-size="16">{_esc(title)}</text>',
        f'<line class="axis" x1="{pad}" y1="{_fmt(zero_y)}" x2="{width - pad}" y2="{_fmt(zero_y)}" stroke="#333"/>',
    ]
    for g, name in enumerate(groups):
        out.append(f'<g class="group" data-group="{_esc(name)}">')
        for s, _ in enumerate(series):
            v = values[g][s]
            x = pad + g * slot + slot * 0.1 + s * bar_w
            top = zero_y - max(v, 0.0) * scale
            out.append(
                f'<rect class="bar" x="{_fmt(x)}" y="{_fmt(top)}" width="{_fmt(bar_w)}" '
                f'height="{_fmt(abs(v) * scale)}" fill="{PALETTE[s % len(PALETTE)]}" data-value="{v:.6f}"/>'
            )
            if errors is not None:
                e = errors[g][s]
                cx = x + bar_w / 2
                y_v = zero_y - v * scale
                out.append(
                    f'<line class="error" x1="{_fmt(cx)}" y1="{y_v - e * scale:.4f}" x2="{_fmt(cx)}" '
                    f'y2="{y_v + e * scale:.4f}" stroke="#000" data-half="{e:.6f}"/>'
                )
        out.append(
            f'<text x="{_fmt(pad + g * slot + slot / 2)}" y="{height - pad + 36}" '
            f'text-anchor="middle" font-size="11">{_esc(name)}</text>'
        )
        out.append("</g>")
    for s, name in enumerate(series):
        y = 40 + 16 * s
        out.append(f'<rect x="{width - pad - 120}" y="{y - 10}" width="10" height="10" fill="{PALETTE[s % len(PALETTE)]}"/>')
        out.append(f'<text x="{width - pad - 104}" y="{y}" font-size="11">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


@dataclass
class AnalysisBundle:
    success: dict[str, dict[str, float]] = field(default_factory=dict)
    correlation: CorrelationReport | None = None
    confidence: ConfidenceReport | None = None
    cost: list[CostRow] = field(default_factory=list)
    skipped_lines: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "success": self.success,
            "correlation": self.correlation.to_dict() if self.correlation else None,
            "confidence": self.confidence.to_dict() if self.confidence else None,
            "cost": [asdict(r) for r in self.cost],
            "skipped_lines": self.skipped_lines,
        }


def analyze(traces: TraceSet) -> AnalysisBundle:
    eps = traces.episodes
    return AnalysisBundle(
        success_table(eps), correlation_report(eps), confidence_report(eps), cost_report(eps),
        traces.skipped,
    )


def emit_plots(bundle: AnalysisBundle, out_dir: str | Path) -> list[Path]:
    """Write SVG charts and the CSV tables behind them; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def put(name: str, text: str) -> None:
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)

    if bundle.success:
        labels = list(bundle.success)
        tasks = sorted({t for row in bundle.success.values() for t in row})
        values = [[bundle.success[l].get(t, 0.0) for t in tasks] for l in labels]
        put("success_rate.svg", grouped_bar_svg("Success rate per configuration", labels, tasks, values))
        put("success_rate.csv", _csv(["label"] + tasks, ([l] + row for l, row in zip(labels, values))))

    corr = bundle.correlation
    if corr is not None:
        groups = list(SERIES)
        outcomes = ("success", "failure")
        stats = [[corr.aggregate[o][s] for o in outcomes] for s in groups]
        values = [[st.mean or 0.0 for st in row] for row in stats]
        errors = [[st.std or 0.0 for st in row] for row in stats]
        put("correlation.svg", grouped_bar_svg(
            "Correlation with time step (mean ± std)", groups, outcomes, values, errors))
        put("correlation.csv", _csv(
            ["series", "outcome", "mean", "std", "n"],
            ([s, o, corr.aggregate[o][s].mean, corr.aggregate[o][s].std, corr.aggregate[o][s].n]
             for s in groups for o in outcomes),
        ))

    if bundle.confidence is not None:
        put("confidence.csv", _csv(
            ["case", "count", "proportion", "mean_prior_gap", "mean_q_gap", "mean_improved_gap"],
            ([r.case, r.count, r.proportion, r.mean_prior_gap, r.mean_q_gap, r.mean_improved_gap]
             for r in bundle.confidence.rows),
        ))
    if bundle.cost:
        put("cost.csv", _csv(
            ["label", "group", "episodes", "mean_steps", "mean_tokens"],
            ([r.label, r.group, r.episodes, r.mean_steps, r.mean_tokens] for r in bundle.cost),
        ))
    return written
