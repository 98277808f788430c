import csv
import io

from offgrid import config
from offgrid.utils.logger_setup import log_debug

log_debug("bench.report module initialized.")

FORMATS = ('csv', 'table')

_CLOCK_LABELS = {
    'virtual': 'virtual (wall_s is emulated time)',
    'real': 'real (wall_s is measured time)',
}


def _cells(row):
    return [
        row.workload,
        row.strategy,
        row.link,
        'on' if row.cache else 'off',
        str(row.trials),
        f"{row.wall_time:.6f}",
        f"{row.bytes_up:.0f}",
        f"{row.bytes_down:.0f}",
        f"{row.fetch_round_trips:.2f}",
        '' if row.speedup is None else f"{row.speedup:.2f}",
    ]


def _mflops_lines(rows):
    lines = []
    for row in rows:
        if row.flops is None:
            continue
        compute = row.flops / row.compute_time / 1e6 if row.compute_time > 0 else 0.0
        end_to_end = row.flops / row.wall_time / 1e6 if row.wall_time > 0 else 0.0
        lines.append(f"MFLOPS {row.workload}/{row.strategy}/{row.link}: "
                     f"compute-only {compute:.2f}, end-to-end {end_to_end:.2f}")
    return lines


def emit_report(rows, fmt='csv', clock=None):
    """Render rows as CSV (fixed header) or as an aligned text table."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format '{fmt}'")
    body = [_cells(row) for row in rows]
    if fmt == 'csv':
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(config.CSV_COLUMNS)
        writer.writerows(body)
        return out.getvalue()

    clock = clock or (rows[0].clock if rows else 'virtual')
    table = [config.CSV_COLUMNS] + body
    widths = [max(len(line[i]) for line in table) for i in range(len(config.CSV_COLUMNS))]
    render = lambda cells: '  '.join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [f"clock: {_CLOCK_LABELS.get(clock, clock)}", render(config.CSV_COLUMNS),
             render(['-' * w for w in widths])]
    lines.extend(render(cells) for cells in body)
    lines.extend(_mflops_lines(rows))
    return '\n'.join(lines) + '\n'
