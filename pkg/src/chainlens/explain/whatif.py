"""What-if: rerun the system on a hypothetically edited input.

Runs the full target, control blocks included, so the answer reflects
system behavior, not just the bare model. A filter rejection is a result
variant, not a failure.
"""

from __future__ import annotations

from typing import Any, Mapping

from ..errors import RejectedByFilter
from .common import PredictTarget, WhatIfResult


def explain_whatif(
    target: PredictTarget,
    base: Mapping[str, Any],
    edits: Mapping[str, Any] | None = None,
) -> WhatIfResult:
    row = dict(base)
    row.update(edits or {})
    row = target.validate_row(row)
    try:
        if target.predict_events is not None:
            decision, events = target.predict_events(row)
        else:
            decision, events = target.predict_record(row), []
    except RejectedByFilter as exc:
        return WhatIfResult(
            row=row,
            decision=None,
            rejected=True,
            message=exc.message,
            events=[{"type": "rejected", "block": exc.block_id, "message": exc.message}],
        )
    return WhatIfResult(row=row, decision=decision, events=events)
