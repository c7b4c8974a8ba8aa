"""Per-step simulation trace and its delimited on-disk form.

One row per vehicle per tick, grouped by vehicle and time-ordered within
each group. A row holds the state at time t, the controls chosen at t, and
the power flows realized over [t, t + dt). Floats are written with repr()
so a read-back reproduces the trace bit-exactly. ``d_next_light`` is -1
past the last light.
"""

from dataclasses import dataclass, field

COLUMNS = (
    "t", "vehicle", "s", "v", "u", "soc", "throttle",
    "p_dem", "p_en", "p_b", "i_b", "fuel_g",
    "d_next_light", "light_state",
    "mpc_iterations", "mpc_residual", "mpc_status",
    "window_violation", "stop_required", "pb_clamped", "soc_clamped",
    "cold_state", "lower_violation",
)

_FLOAT_COLS = {
    "t", "s", "v", "u", "soc", "throttle", "p_dem", "p_en", "p_b", "i_b",
    "fuel_g", "d_next_light", "mpc_residual",
}
_INT_COLS = {
    "vehicle", "mpc_iterations", "window_violation", "stop_required",
    "pb_clamped", "soc_clamped", "cold_state", "lower_violation",
}


@dataclass
class SimTrace:
    """Column store per vehicle: data[vehicle][column] -> list."""

    n_vehicles: int
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.data:
            self.data = {
                vid: {col: [] for col in COLUMNS if col != "vehicle"}
                for vid in range(self.n_vehicles)
            }

    def append(self, vid: int, **values) -> None:
        rowset = self.data[vid]
        for col, series in rowset.items():
            series.append(values[col])

    def column(self, vid: int, col: str) -> list:
        return self.data[vid][col]

    def n_steps(self, vid: int) -> int:
        return len(self.data[vid]["t"])

    def rows(self):
        """Iterate rows grouped by vehicle, time-ordered within each group."""
        for vid in range(self.n_vehicles):
            rowset = self.data[vid]
            for i in range(len(rowset["t"])):
                row = {col: rowset[col][i] for col in rowset}
                row["vehicle"] = vid
                yield row


def _format(col: str, value) -> str:
    if col in _INT_COLS:
        return str(int(value))
    if col in _FLOAT_COLS:
        return repr(float(value))
    return str(value)


def write_trace_csv(trace: SimTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(COLUMNS) + "\n")
        for row in trace.rows():
            fh.write(",".join(_format(col, row[col]) for col in COLUMNS) + "\n")


def read_trace_csv(path) -> SimTrace:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != COLUMNS:
            raise ValueError(f"unexpected trace header in {path}")
        parsed = {}
        for line in fh:
            parts = line.rstrip("\n").split(",")
            row = dict(zip(COLUMNS, parts))
            vid = int(row["vehicle"])
            rowset = parsed.setdefault(
                vid, {col: [] for col in COLUMNS if col != "vehicle"})
            for col in rowset:
                raw = row[col]
                if col in _INT_COLS:
                    rowset[col].append(int(raw))
                elif col in _FLOAT_COLS:
                    rowset[col].append(float(raw))
                else:
                    rowset[col].append(raw)
    n = (max(parsed) + 1) if parsed else 0
    trace = SimTrace(n_vehicles=n)
    for vid, rowset in parsed.items():
        trace.data[vid] = rowset
    return trace
