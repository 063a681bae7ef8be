"""Counterfactual search: minimally modified inputs that flip the decision.

Model-agnostic random-restart hill climbing in encoded space over the
mutable feature columns. Each restart walks single-feature moves (a step in
standardized space for numerics, a level switch for categoricals) downhill
on

    loss = prediction gap
         + proximity_weight * L1 distance to the original
         - diversity_weight * distance to already-found counterfactuals

and keeps the closest point whose prediction (through the full target,
chain-level control blocks included) equals the requested label. The gap
term is the negative log-probability of the target class while the label is
wrong (so steep models still provide a slope far from the boundary) and zero
once it is right. Numeric coordinates of a found counterfactual are then
bisected back toward the original while validity holds, tightening
proximity. Columns marked immutable or protected are never touched. An
exhausted search returns an empty list with a diagnostic instead of failing.
"""

from __future__ import annotations

from typing import Any, Mapping

import numpy as np

from ..data import NUMERIC
from .common import Counterfactual, CounterfactualSearchResult, PredictTarget


def _margin(probs: np.ndarray, ci: int) -> float:
    others = np.delete(probs, ci)
    return float(probs[ci] - others.max()) if len(others) else 1.0


def explain_counterfactual(
    target: PredictTarget,
    instance: Mapping[str, Any],
    target_label: str | None = None,
    k: int = 3,
    max_iters: int = 200,
    seed: int = 0,
    proximity_weight: float = 0.1,
    diversity_weight: float = 0.05,
    step_size: float = 0.25,
    restarts: int | None = None,
) -> CounterfactualSearchResult:
    instance = target.validate_row(instance)
    enc = target.encoder
    current = target.predict_record(instance)
    if target_label is None:
        # default: the first class other than the current prediction
        target_label = next(c for c in target.classes if c != current["label"]) \
            if len(target.classes) > 1 else current["label"]
    ci = target.class_index(target_label)

    mutable = [
        g for g in enc.groups
        for col in [next(c for c in target.columns if c.name == g.column)]
        if col.mutable_for_counterfactuals and not col.protected
    ]
    if not mutable:
        return CounterfactualSearchResult(
            [], "no mutable features: every column is immutable or protected"
        )

    x_orig = enc.encode_row(instance)

    def l1(row: Mapping[str, Any]) -> float:
        return float(np.abs(enc.encode_row(row) - x_orig).sum())

    found: list[Counterfactual] = []
    found_vecs: list[np.ndarray] = []
    guards_seen: set[str] = set()

    def assess(row: dict) -> tuple[float, float]:
        probs, events = target.proba_and_events(row)
        for event in events:
            if event.get("type") == "override":
                guards_seen.add(str(event.get("block")))
        margin = _margin(probs, ci)
        gap = 0.0 if margin > 0 else -float(np.log(max(float(probs[ci]), 1e-12)))
        loss = gap + proximity_weight * l1(row)
        if found_vecs and diversity_weight:
            nearest = min(float(np.linalg.norm(enc.encode_row(row) - v)) for v in found_vecs)
            loss -= diversity_weight * nearest
        return loss, margin

    def moves(row: dict) -> list[dict]:
        out = []
        for group in mutable:
            if group.kind == NUMERIC:
                std = enc.stds[group.column]
                for scale in (1.0, -1.0, 4.0, -4.0):  # long-range moves cross plateaus
                    candidate = dict(row)
                    candidate[group.column] = row[group.column] + scale * step_size * std
                    out.append(candidate)
            else:
                for level in group.levels:
                    if level != row[group.column]:
                        candidate = dict(row)
                        candidate[group.column] = level
                        out.append(candidate)
        return out

    def is_valid(row: dict) -> bool:
        probs, _ = target.proba_and_events(row)
        return _margin(probs, ci) > 0

    def refine(row: dict) -> dict:
        # bisect each changed numeric coordinate toward the original while
        # the prediction stays on the target label
        refined = dict(row)
        for group in mutable:
            if group.kind != NUMERIC or refined[group.column] == instance[group.column]:
                continue
            lo = instance[group.column]  # original side (may be invalid)
            hi = refined[group.column]  # valid side
            tolerance = 0.05 * step_size * enc.stds[group.column]
            for _ in range(40):
                if abs(hi - lo) <= tolerance:
                    break
                mid = (lo + hi) / 2.0
                candidate = dict(refined)
                candidate[group.column] = mid
                if is_valid(candidate):
                    hi = mid
                else:
                    lo = mid
            refined[group.column] = hi
        return refined

    total_restarts = restarts if restarts is not None else max(8, 4 * k)
    for attempt in range(total_restarts):
        rng = np.random.default_rng((seed, attempt))
        start = dict(instance)
        if attempt:
            for group in mutable:
                if group.kind == NUMERIC:
                    # wide uniform jitter in standardized space so some restart
                    # lands outside saturated regions of steep models
                    start[group.column] = (
                        enc.means[group.column] + float(rng.uniform(-3.0, 3.0)) * enc.stds[group.column]
                    )
                elif rng.random() < 0.5:
                    start[group.column] = group.levels[rng.integers(len(group.levels))]
        current_row = start
        current_loss, current_margin = assess(current_row)
        best_valid: tuple[float, dict] | None = None
        if current_margin > 0:
            best_valid = (l1(current_row), dict(current_row))
        for _ in range(max_iters):
            best_move: tuple[float, dict] | None = None
            for candidate in moves(current_row):
                loss, margin = assess(candidate)
                if margin > 0:
                    candidate_l1 = l1(candidate)
                    if best_valid is None or candidate_l1 < best_valid[0]:
                        best_valid = (candidate_l1, dict(candidate))
                if best_move is None or loss < best_move[0]:
                    best_move = (loss, candidate)
            if best_move is None or best_move[0] >= current_loss - 1e-12:
                break
            current_loss, current_row = best_move
        if best_valid is None:
            continue
        row = refine(best_valid[1])
        record = target.predict_record(row)
        if record["label"] != target_label:
            continue  # margin said valid but full-path label disagrees; drop
        vec = enc.encode_row(row)
        if any(np.allclose(vec, v, atol=1e-12) for v in found_vecs):
            continue
        changed = [c.name for c in target.columns if row.get(c.name) != instance.get(c.name)]
        found.append(
            Counterfactual(
                original=dict(instance),
                modified=dict(row),
                changed=changed,
                predicted_label=record["label"],
                distance=float(np.abs(vec - x_orig).sum()),
            )
        )
        found_vecs.append(vec)
        if len(found) >= k:
            break

    diagnostic = None
    if not found:
        diagnostic = f"no counterfactual reaching label '{target_label}' found"
        if guards_seen:
            diagnostic += (
                "; override rules on block(s) "
                + ", ".join(sorted(guards_seen))
                + " constrained the reachable labels"
            )
    return CounterfactualSearchResult(found, diagnostic)
