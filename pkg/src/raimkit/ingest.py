"""Turn raw multimodal episodes into step-aligned model inputs.

An episode is one ICU visit: continuous channels (a dense pseudo-ECG
waveform plus per-minute vitals), irregular event tables (charted
observations, lab results, intervention starts) and an outcome. The
pipeline here slices the continuous channels into fixed-length steps,
aggregates chart observations per step, carries lab values forward with
freshness flags, marks the steps containing lab/intervention events,
and cuts the step sequence into labeled, non-overlapping observation
windows.

All internal timestamps are hours from record start; the episode file
format stores event times in seconds (see docs/formats.md).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

DEFAULT_STEP_HOURS = 1.0
DEFAULT_DISCARD_HOURS = 1.0
DEFAULT_WINDOW_STEPS = 12
DECOMP_HORIZON_HOURS = 24.0
ADULT_AGE_YEARS = 18.0


@dataclass
class CohortSchema:
    """Names, population defaults and baseline vocabulary for a cohort."""

    chart_vars: tuple = ("heart_rate", "resp_rate", "mean_bp")
    chart_defaults: dict = field(
        default_factory=lambda: {"heart_rate": 80.0, "resp_rate": 18.0, "mean_bp": 85.0}
    )
    labs: tuple = ("glucose", "ph", "temperature")
    lab_defaults: dict = field(
        default_factory=lambda: {"glucose": 110.0, "ph": 7.4, "temperature": 37.0}
    )
    genders: tuple = ("f", "m")
    ethnicities: tuple = ("grp_a", "grp_b", "grp_c")

    @property
    def baseline_dim(self):
        return 1 + len(self.genders) + len(self.ethnicities)

    @property
    def x_dim(self):
        return 3 * len(self.chart_vars) + 2 * len(self.labs)


@dataclass
class Channel:
    """One continuously monitored stream."""

    name: str
    kind: str  # "waveform" | "vital"
    samples_per_hour: float
    samples: np.ndarray


@dataclass
class RawEpisode:
    """One ICU visit worth of aligned streams, events and outcome."""

    episode_id: str
    age: float
    gender: str
    ethnicity: str
    record_hours: float
    channels: list
    chart_events: list  # (hour, name, value)
    lab_events: list  # (hour, name, value)
    intervention_events: list  # (hour, kind)
    death_hour: float | None
    discharge_hour: float


@dataclass
class StepInput:
    """Per-step processed inputs: channel segments plus chart/lab vectors."""

    t: int  # 1-based absolute step index
    segments: list  # K float arrays in channel order
    zero_filled: list  # per-channel bool: short stream padded with zeros
    chart: np.ndarray  # (3 * n_chart_vars,)
    lab: np.ndarray  # (n_labs values, then n_labs freshness flags)


@dataclass
class LabeledWindow:
    """A fixed-length window of steps with end-of-window labels."""

    episode_id: str
    index: int
    end_hour: float
    steps: list  # W StepInput
    lab_marks: np.ndarray  # (W,) uint8, 1 where a lab event fell in that step
    int_marks: np.ndarray  # (W,) uint8, interventions
    baseline: np.ndarray
    decomp: int
    los_class: int


def encode_baseline(episode, schema):
    """Age (scaled by 1/100) followed by gender and ethnicity one-hots."""
    vec = np.zeros(schema.baseline_dim, dtype=np.float64)
    vec[0] = episode.age / 100.0
    if episode.gender not in schema.genders:
        raise DataError(f"episode {episode.episode_id}: unknown gender {episode.gender!r}")
    if episode.ethnicity not in schema.ethnicities:
        raise DataError(f"episode {episode.episode_id}: unknown ethnicity {episode.ethnicity!r}")
    vec[1 + schema.genders.index(episode.gender)] = 1.0
    off = 1 + len(schema.genders)
    vec[off + schema.ethnicities.index(episode.ethnicity)] = 1.0
    return vec


def segment_channels(episode, n_steps, step_hours=DEFAULT_STEP_HOURS, discard_hours=DEFAULT_DISCARD_HOURS):
    """Slice every channel into ``n_steps`` segments of rate*step samples.

    Streams that end early are zero-padded with the step flagged; a
    channel with no samples at all rejects the episode.
    """
    per_channel = []
    for ch in episode.channels:
        if ch.samples.size == 0:
            raise DataError(f"episode {episode.episode_id}: channel {ch.name!r} has no samples")
        per_step = ch.samples_per_hour * step_hours
        n = int(round(per_step))
        if abs(per_step - n) > 1e-9 or n < 1:
            raise DataError(
                f"episode {episode.episode_id}: channel {ch.name!r} rate "
                f"{ch.samples_per_hour}/h does not divide the {step_hours} h step"
            )
        offset = int(round(ch.samples_per_hour * discard_hours))
        segments = []
        flags = []
        for t in range(n_steps):
            lo, hi = offset + t * n, offset + (t + 1) * n
            piece = ch.samples[lo:hi]
            if piece.shape[0] < n:
                padded = np.zeros(n, dtype=np.float64)
                padded[: piece.shape[0]] = piece
                segments.append(padded)
                flags.append(True)
            else:
                segments.append(np.asarray(piece, dtype=np.float64))
                flags.append(False)
        per_channel.append((segments, flags))
    return per_channel


def aggregate_chart(chart_events, n_steps, schema, step_hours=DEFAULT_STEP_HOURS, discard_hours=DEFAULT_DISCARD_HOURS):
    """Per-step (min, mean, max) per chart variable with forward fill.

    Steps with no observation repeat the previous step's statistics;
    steps before the first observation use the schema's population
    default for all three statistics. Events before the discard cut are
    dropped entirely.
    """
    n_vars = len(schema.chart_vars)
    var_index = {name: i for i, name in enumerate(schema.chart_vars)}
    buckets = [[[] for _ in range(n_vars)] for _ in range(n_steps)]
    for hour, name, value in chart_events:
        if name not in var_index:
            raise DataError(
                f"unknown chart variable {name!r}; schema has {list(schema.chart_vars)}"
            )
        t = int((hour - discard_hours) // step_hours)
        if 0 <= t < n_steps:
            buckets[t][var_index[name]].append(float(value))
    out = np.zeros((n_steps, 3 * n_vars), dtype=np.float64)
    last = np.array(
        [
            [schema.chart_defaults[v]] * 3
            for v in schema.chart_vars
        ],
        dtype=np.float64,
    )  # (n_vars, 3) of (min, mean, max)
    for t in range(n_steps):
        for v in range(n_vars):
            obs = buckets[t][v]
            if obs:
                last[v] = (min(obs), sum(obs) / len(obs), max(obs))
            out[t, 3 * v : 3 * v + 3] = last[v]
    return out


def build_lab_vectors(lab_events, n_steps, schema, step_hours=DEFAULT_STEP_HOURS, discard_hours=DEFAULT_DISCARD_HOURS):
    """Per-step lab vector: carried-forward values then freshness flags.

    The value half holds the most recent measurement at or before the
    step (population default before the first one); the flag half is 1
    exactly when a new measurement landed inside the step.
    """
    n_labs = len(schema.labs)
    lab_index = {name: i for i, name in enumerate(schema.labs)}
    events = []
    for hour, name, value in lab_events:
        if name not in lab_index:
            raise DataError(f"unknown lab {name!r}; schema has {list(schema.labs)}")
        t = int((hour - discard_hours) // step_hours)
        if 0 <= t < n_steps:
            events.append((t, lab_index[name], float(value)))
    events.sort(key=lambda e: e[0])
    out = np.zeros((n_steps, 2 * n_labs), dtype=np.float64)
    current = np.array([schema.lab_defaults[name] for name in schema.labs], dtype=np.float64)
    by_step = {}
    for t, li, value in events:
        by_step.setdefault(t, []).append((li, value))
    for t in range(n_steps):
        fresh = np.zeros(n_labs, dtype=np.float64)
        for li, value in by_step.get(t, ()):
            current[li] = value
            fresh[li] = 1.0
        out[t, :n_labs] = current
        out[t, n_labs:] = fresh
    return out


def event_step_marks(event_hours, n_steps, step_hours=DEFAULT_STEP_HOURS, discard_hours=DEFAULT_DISCARD_HOURS):
    """Binary per-step marks: 1 where at least one event fell in the step."""
    marks = np.zeros(n_steps, dtype=np.uint8)
    for hour in event_hours:
        t = int((hour - discard_hours) // step_hours)
        if 0 <= t < n_steps:
            marks[t] = 1
    return marks


def build_guidance(lab_events, intervention_events, t, window_steps=DEFAULT_WINDOW_STEPS,
                   step_hours=DEFAULT_STEP_HOURS, discard_hours=DEFAULT_DISCARD_HOURS):
    """Binary 2 x min(t, W) matrix locating lab and intervention steps.

    Row 0 marks lab measurements, row 1 intervention initiations.
    Column j (1-based, matching the attention window convention)
    corresponds to absolute step max(t - W, 0) + j, so the last column
    is always the current step t once t >= W.
    """
    if t < 1:
        raise DataError(f"guidance needs step t >= 1, got {t}")
    width = min(t, window_steps)
    base = max(t - window_steps, 0)
    lab_marks = event_step_marks([h for h, _, _ in lab_events], t, step_hours, discard_hours)
    int_marks = event_step_marks([h for h, _ in intervention_events], t, step_hours, discard_hours)
    g = np.zeros((2, width), dtype=np.uint8)
    g[0] = lab_marks[base : base + width]
    g[1] = int_marks[base : base + width]
    return g


def segment_episode(episode, schema=None, step_hours=DEFAULT_STEP_HOURS, discard_hours=DEFAULT_DISCARD_HOURS):
    """Process one episode into its full list of StepInput."""
    schema = schema or CohortSchema()
    n_steps = int((episode.record_hours - discard_hours) // step_hours)
    if n_steps < 1:
        raise DataError(f"episode {episode.episode_id}: too short to yield any step")
    per_channel = segment_channels(episode, n_steps, step_hours, discard_hours)
    chart = aggregate_chart(episode.chart_events, n_steps, schema, step_hours, discard_hours)
    labs = build_lab_vectors(episode.lab_events, n_steps, schema, step_hours, discard_hours)
    steps = []
    for t in range(n_steps):
        steps.append(
            StepInput(
                t=t + 1,
                segments=[segs[t] for segs, _ in per_channel],
                zero_filled=[flags[t] for _, flags in per_channel],
                chart=chart[t],
                lab=labs[t],
            )
        )
    return steps


def label_decompensation(death_hour, window_end_hour, horizon_hours=DECOMP_HORIZON_HOURS):
    """1 iff death falls in (window end, window end + horizon]."""
    if death_hour is None:
        return 0
    return int(window_end_hour < death_hour <= window_end_hour + horizon_hours)


def label_los(discharge_hour, window_end_hour):
    """Remaining-stay class: ceil(days) up to 7, 8 for (7, 14] days, 9 beyond."""
    remaining_days = (discharge_hour - window_end_hour) / 24.0
    if remaining_days <= 0:
        raise DataError(
            f"discharge at {discharge_hour} h is not after window end {window_end_hour} h"
        )
    if remaining_days <= 7.0:
        return int(math.ceil(remaining_days))
    if remaining_days <= 14.0:
        return 8
    return 9


def window_episodes(episode, schema=None, step_hours=DEFAULT_STEP_HOURS,
                    discard_hours=DEFAULT_DISCARD_HOURS, window_steps=DEFAULT_WINDOW_STEPS,
                    stride_steps=None):
    """Cut an eligible episode into labeled observation windows.

    Eligibility: adult (age >= 18) and record length at least
    discard + W steps (13 h at the defaults). Ineligible episodes yield
    an empty list; the caller's ingest report counts them. Windows are
    consecutive and non-overlapping unless a stride is given, each
    labeled at its end hour.
    """
    schema = schema or CohortSchema()
    stride_steps = window_steps if stride_steps is None else stride_steps
    min_hours = discard_hours + window_steps * step_hours
    if episode.age < ADULT_AGE_YEARS or episode.record_hours < min_hours:
        return []
    steps = segment_episode(episode, schema, step_hours, discard_hours)
    lab_marks = event_step_marks([h for h, _, _ in episode.lab_events], len(steps), step_hours, discard_hours)
    int_marks = event_step_marks([h for h, _ in episode.intervention_events], len(steps), step_hours, discard_hours)
    baseline = encode_baseline(episode, schema)
    windows = []
    index = 0
    start = 0
    while start + window_steps <= len(steps):
        end_hour = discard_hours + (start + window_steps) * step_hours
        windows.append(
            LabeledWindow(
                episode_id=episode.episode_id,
                index=index,
                end_hour=end_hour,
                steps=steps[start : start + window_steps],
                lab_marks=lab_marks[start : start + window_steps].copy(),
                int_marks=int_marks[start : start + window_steps].copy(),
                baseline=baseline,
                decomp=label_decompensation(episode.death_hour, end_hour),
                los_class=label_los(episode.discharge_hour, end_hour),
            )
        )
        index += 1
        start += stride_steps
    return windows


@dataclass
class IngestReport:
    """Cohort statistics emitted alongside a windowed dataset."""

    n_episodes: int = 0
    n_eligible: int = 0
    n_rejected_short: int = 0
    n_rejected_bad: int = 0
    n_windows: int = 0
    n_positive: int = 0
    los_histogram: list = field(default_factory=lambda: [0] * 9)
    bad_files: list = field(default_factory=list)

    @property
    def positive_rate(self):
        return self.n_positive / self.n_windows if self.n_windows else 0.0

    def to_dict(self):
        return {
            "n_episodes": self.n_episodes,
            "n_eligible": self.n_eligible,
            "n_rejected_short": self.n_rejected_short,
            "n_rejected_bad": self.n_rejected_bad,
            "n_windows": self.n_windows,
            "positive_rate": self.positive_rate,
            "los_histogram": self.los_histogram,
            "bad_files": self.bad_files,
        }


def window_cohort(episodes, schema=None, report=None, **kwargs):
    """Window a sequence of episodes, tallying the ingest report."""
    schema = schema or CohortSchema()
    report = report if report is not None else IngestReport()
    windows = []
    for episode in episodes:
        report.n_episodes += 1
        made = window_episodes(episode, schema, **kwargs)
        if not made:
            report.n_rejected_short += 1
            continue
        report.n_eligible += 1
        for w in made:
            report.n_windows += 1
            report.n_positive += w.decomp
            report.los_histogram[w.los_class - 1] += 1
        windows.extend(made)
    return windows, report


# ---------------------------------------------------------------------------
# episode file format (see docs/formats.md)
# ---------------------------------------------------------------------------

EPISODE_MAGIC = "raim-episode 1"


def write_episode(episode, path):
    """Serialise an episode to the sectioned text format."""
    lines = [EPISODE_MAGIC, "[episode]"]
    lines.append(f"id = {episode.episode_id}")
    lines.append(f"record_hours = {episode.record_hours:.10g}")
    death = "none" if episode.death_hour is None else f"{episode.death_hour:.10g}"
    lines.append(f"death_hour = {death}")
    lines.append(f"discharge_hour = {episode.discharge_hour:.10g}")
    lines.append("[baseline]")
    lines.append(f"age = {episode.age:.10g}")
    lines.append(f"gender = {episode.gender}")
    lines.append(f"ethnicity = {episode.ethnicity}")
    for ch in episode.channels:
        lines.append("[channel]")
        lines.append(f"name = {ch.name}")
        lines.append(f"kind = {ch.kind}")
        lines.append(f"samples_per_hour = {ch.samples_per_hour:.10g}")
        lines.append("data = " + " ".join(f"{v:.8g}" for v in ch.samples))
    lines.append("[events]")
    for hour, name, value in episode.chart_events:
        lines.append(f"{hour * 3600.0:.6f} chart {name} {value:.8g}")
    for hour, name, value in episode.lab_events:
        lines.append(f"{hour * 3600.0:.6f} lab {name} {value:.8g}")
    for hour, kind in episode.intervention_events:
        lines.append(f"{hour * 3600.0:.6f} intervention {kind} 1")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_episode(path):
    """Parse an episode file; malformed content raises DataError."""
    with open(path) as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0].strip() != EPISODE_MAGIC:
        raise DataError(f"{path}: not an episode file (missing {EPISODE_MAGIC!r} header)")
    fields = {}
    channels = []
    chart_events, lab_events, intervention_events = [], [], []
    section = None
    current_channel = None

    def flush_channel():
        nonlocal current_channel
        if current_channel is not None:
            for key in ("name", "kind", "samples_per_hour", "data"):
                if key not in current_channel:
                    raise DataError(f"{path}: channel section missing {key!r}")
            channels.append(
                Channel(
                    name=current_channel["name"],
                    kind=current_channel["kind"],
                    samples_per_hour=float(current_channel["samples_per_hour"]),
                    samples=np.array(current_channel["data"].split(), dtype=np.float64)
                    if current_channel["data"]
                    else np.zeros(0),
                )
            )
            current_channel = None

    for lineno, line in enumerate(raw[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            flush_channel()
            section = line
            if section == "[channel]":
                current_channel = {}
            continue
        if section in ("[episode]", "[baseline]"):
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
        elif section == "[channel]":
            key, _, value = line.partition("=")
            current_channel[key.strip()] = value.strip()
        elif section == "[events]":
            parts = line.split()
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: event rows need 4 columns")
            seconds, kind, name, value = parts
            hour = float(seconds) / 3600.0
            if kind == "chart":
                chart_events.append((hour, name, float(value)))
            elif kind == "lab":
                lab_events.append((hour, name, float(value)))
            elif kind == "intervention":
                intervention_events.append((hour, name))
            else:
                raise DataError(f"{path}:{lineno}: unknown event kind {kind!r}")
        else:
            raise DataError(f"{path}:{lineno}: content outside any section")
    flush_channel()
    try:
        death = fields["death_hour"]
        episode = RawEpisode(
            episode_id=fields["id"],
            age=float(fields["age"]),
            gender=fields["gender"],
            ethnicity=fields["ethnicity"],
            record_hours=float(fields["record_hours"]),
            channels=channels,
            chart_events=chart_events,
            lab_events=lab_events,
            intervention_events=intervention_events,
            death_hour=None if death == "none" else float(death),
            discharge_hour=float(fields["discharge_hour"]),
        )
    except KeyError as exc:
        raise DataError(f"{path}: missing field {exc}")
    for hour, _, _ in chart_events:
        if not 0 <= hour <= episode.record_hours:
            raise DataError(f"{path}: chart event at {hour} h outside the record")
    return episode
