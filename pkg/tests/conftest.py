from __future__ import annotations

import pytest

from memrex.catalog import Scenario


@pytest.fixture
def bob_scenario() -> Scenario:
    """The worked two-item example: one history visit, one candidate."""
    return Scenario(
        scenario_id="bob-h1",
        user_id="Bob",
        candidates=("Basil",),
        history=("Seas",),
        preference={"category": ("thai",), "price": ("affordable",)},
        ground_truth=("Basil",),
        with_history=True,
        item_values={"Basil": ("thai", "affordable"), "Seas": ("affordable",)},
        value_slots={"thai": "category", "affordable": "price"},
    )


def make_scenario(
    candidates: dict[str, tuple[str, ...]],
    history: dict[str, tuple[str, ...]],
    value_slots: dict[str, str],
    truth: str | None = None,
    user_id: str = "u0",
) -> Scenario:
    """Hand-built scenario; invariant checks are deliberately not run."""
    truth = truth or next(iter(candidates))
    item_values = {**candidates, **history}
    preference: dict[str, list[str]] = {}
    for vid in item_values[truth]:
        preference.setdefault(value_slots[vid], []).append(vid)
    return Scenario(
        scenario_id=f"{user_id}-h{1 if history else 0}",
        user_id=user_id,
        candidates=tuple(candidates),
        history=tuple(history),
        preference={s: tuple(sorted(v)) for s, v in preference.items()},
        ground_truth=(truth,),
        with_history=bool(history),
        item_values=item_values,
        value_slots=value_slots,
    )
