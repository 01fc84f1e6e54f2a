import os
import time

import jinja2

from LookupMul import StartTime, __version__
from LookupMul.utils.time_format import get_readable_time

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "template")

env = jinja2.Environment(trim_blocks=True, lstrip_blocks=True, keep_trailing_newline=True)
env.filters["percent"] = lambda value: f"{100.0 * float(value):.1f}"


def render_report(title, rows, notes=None, template_file="report.txt"):
    with open(os.path.join(TEMPLATE_DIR, template_file)) as f:
        template = env.from_string(f.read())

    return template.render(
        title=title,
        rows=rows,
        notes=notes or [],
        version=__version__,
        elapsed=get_readable_time(time.time() - StartTime),
    )
