"""Synthetic restaurant catalog and dialog scenario generation.

Scenarios pair a ground-truth item with negatively sampled distractors that
stay deliberately similar to it (same region, overlapping values), so that
telling candidates apart requires actual preference elicitation. Each user
gets a with-history and a without-history twin scenario that differ only in
the visited-items list.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class GenerationError(ValueError):
    """Catalog or scenario synthesis cannot satisfy a stated constraint."""


SLOTS: tuple[str, ...] = (
    "category",
    "location",
    "price",
    "parking",
    "alcohol",
    "wifi",
    "ambience",
    "noise",
    "attire",
    "good_for",
)

# Curated human-readable vocabularies; slots needing more values than the
# curated list get generated `<stem>_<n>` extensions.
_BASE_VALUES: dict[str, list[str]] = {
    "category": [
        "thai", "italian", "mexican", "chinese", "japanese", "indian", "korean",
        "vietnamese", "greek", "french", "spanish", "ethiopian", "turkish",
        "lebanese", "moroccan", "brazilian", "peruvian", "cuban", "filipino",
        "malaysian", "burgers", "pizza", "sushi", "barbecue", "seafood",
        "steakhouse", "vegan", "vegetarian", "fast_food", "new_american",
        "southern", "cajun", "tapas", "ramen", "dim_sum", "deli", "diner",
        "bakery", "coffee_and_tea", "juice_bars_and_smoothies",
    ],
    "price": ["cheap", "affordable", "expensive", "luxury"],
    "parking": ["street_parking", "parking_lot", "parking_garage", "valet", "validated_parking", "bike_parking"],
    "alcohol": ["full_bar", "beer_and_wine", "byob", "no_alcohol"],
    "wifi": ["free_wifi", "paid_wifi", "no_wifi"],
    "ambience": [
        "casual_vibe", "romantic", "trendy", "intimate", "classy", "divey",
        "touristy", "hipster", "upscale", "family_friendly", "nightlife",
        "sports_bar", "quiet_corner", "rooftop", "garden_patio", "waterfront",
    ],
    "noise": ["quiet", "average_noise", "loud", "very_loud"],
    "attire": ["casual_attire", "business_casual", "dressy", "formal"],
    "good_for": [
        "breakfast", "brunch", "lunch", "dinner", "late_night", "dessert",
        "groups", "kids", "date_night", "solo_dining", "business_meetings",
        "happy_hour", "quick_bite", "celebrations", "outdoor_seating",
    ],
}

_CITY_STEMS = [
    "spring", "oak", "maple", "cedar", "river", "lake", "hill", "green",
    "fair", "brook", "ash", "elm", "stone", "mill", "bay", "glen", "clear",
    "west", "north", "bell",
]
_CITY_SUFFIXES = ["field", "ville", "port", "ton", "wood", "dale", "burg", "view"]
_STATES = ["AZ", "CA", "NV", "WI", "IL", "OH", "PA", "NC", "TX", "WA", "ME", "ON"]

_ITEM_ADJECTIVES = [
    "golden", "rustic", "urban", "cozy", "royal", "silver", "lucky", "happy",
    "blue", "red", "green", "grand", "little", "old", "new", "sunny", "wild",
    "spicy", "sweet", "smoky", "crispy", "velvet", "copper", "iron", "marble",
]
_ITEM_NOUNS = [
    "table", "kitchen", "grill", "bistro", "garden", "spoon", "fork", "plate",
    "oven", "hearth", "lantern", "anchor", "harvest", "pantry", "skillet",
    "tavern", "cellar", "terrace", "corner", "junction", "wagon", "barrel",
]

DEFAULT_VALUE_COUNTS: dict[str, int] = {
    "category": 150,
    "location": 120,
    "price": 4,
    "parking": 6,
    "alcohol": 4,
    "wifi": 3,
    "ambience": 40,
    "noise": 4,
    "attire": 4,
    "good_for": 135,
}


@dataclass(frozen=True)
class CatalogValue:
    value_id: str
    name: str
    slot_id: str


@dataclass(frozen=True)
class CatalogItem:
    item_id: str
    name: str
    values: tuple[str, ...]  # sorted value_ids
    region: str

    def value_set(self) -> frozenset[str]:
        return frozenset(self.values)


@dataclass(frozen=True)
class CatalogConfig:
    n_items: int = 500
    values_per_slot: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_VALUE_COUNTS))
    seed: int = 7
    # chance that an item carries a value for each optional slot
    optional_slot_rate: float = 0.7


class Catalog:
    """Immutable value/item registry for one domain."""

    def __init__(self, values: Sequence[CatalogValue], items: Sequence[CatalogItem]):
        self.values: dict[str, CatalogValue] = {v.value_id: v for v in values}
        if len(self.values) != len(values):
            raise GenerationError("duplicate value ids in catalog")
        self.items: dict[str, CatalogItem] = {i.item_id: i for i in items}
        if len(self.items) != len(items):
            raise GenerationError("duplicate item ids in catalog")
        self._by_slot: dict[str, list[str]] = {s: [] for s in SLOTS}
        for v in values:
            self._by_slot[v.slot_id].append(v.value_id)
        self._by_region: dict[str, list[str]] = {}
        for i in items:
            self._by_region.setdefault(i.region, []).append(i.item_id)

    def slot_of(self, value_id: str) -> str:
        return self.values[value_id].slot_id

    def values_of_slot(self, slot_id: str) -> list[str]:
        return list(self._by_slot[slot_id])

    def items_in_region(self, region: str) -> list[str]:
        return list(self._by_region.get(region, []))

    def item_value_map(self, item_ids: Iterable[str]) -> dict[str, tuple[str, ...]]:
        return {iid: self.items[iid].values for iid in item_ids}

    def value_slot_map(self, value_ids: Iterable[str]) -> dict[str, str]:
        return {vid: self.values[vid].slot_id for vid in value_ids}


@dataclass(frozen=True)
class Scenario:
    """One dialog setting: user, candidates, history, preference, ground truth.

    ``item_values`` and ``value_slots`` carry the item/value and value/slot
    incidence for everything the scenario references, so graph construction
    needs no catalog access.
    """

    scenario_id: str
    user_id: str
    candidates: tuple[str, ...]
    history: tuple[str, ...]
    preference: dict[str, tuple[str, ...]]
    ground_truth: tuple[str, ...]
    with_history: bool
    item_values: dict[str, tuple[str, ...]]
    value_slots: dict[str, str]

    def validate(self) -> None:
        if len(self.ground_truth) != 1:
            raise GenerationError("scenarios carry exactly one ground-truth item")
        if not set(self.ground_truth) <= set(self.candidates):
            raise GenerationError("ground truth must be among the candidates")
        if not 10 <= len(self.candidates) <= 20:
            raise GenerationError(f"|C|={len(self.candidates)} outside [10, 20]")
        if self.with_history:
            if not 5 <= len(self.history) <= 20:
                raise GenerationError(f"|H|={len(self.history)} outside [5, 20]")
        elif self.history:
            raise GenerationError("without-history scenario has visited items")
        truth_values = self.item_values[self.ground_truth[0]]
        expect: dict[str, list[str]] = {}
        for vid in truth_values:
            expect.setdefault(self.value_slots[vid], []).append(vid)
        if {s: tuple(sorted(v)) for s, v in expect.items()} != self.preference:
            raise GenerationError("preference does not match the ground-truth item")
        for iid in list(self.candidates) + list(self.history):
            if iid not in self.item_values:
                raise GenerationError(f"missing value map for item {iid}")
        for vids in self.item_values.values():
            for vid in vids:
                if vid not in self.value_slots:
                    raise GenerationError(f"value {vid} lacks a slot mapping")

    def preferred_values(self) -> list[str]:
        out: list[str] = []
        for slot in sorted(self.preference):
            out.extend(self.preference[slot])
        return out

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "user_id": self.user_id,
            "candidates": list(self.candidates),
            "history": list(self.history),
            "preference": {s: list(v) for s, v in sorted(self.preference.items())},
            "ground_truth": list(self.ground_truth),
            "with_history": self.with_history,
            "item_values": {k: list(v) for k, v in sorted(self.item_values.items())},
            "value_slots": dict(sorted(self.value_slots.items())),
        }

    @staticmethod
    def from_dict(payload: dict) -> "Scenario":
        return Scenario(
            scenario_id=payload["scenario_id"],
            user_id=payload["user_id"],
            candidates=tuple(payload["candidates"]),
            history=tuple(payload["history"]),
            preference={s: tuple(v) for s, v in payload["preference"].items()},
            ground_truth=tuple(payload["ground_truth"]),
            with_history=payload["with_history"],
            item_values={k: tuple(v) for k, v in payload["item_values"].items()},
            value_slots=dict(payload["value_slots"]),
        )


@dataclass(frozen=True)
class ScenarioSet:
    split: str  # train | dev | test
    scenarios: tuple[Scenario, ...]

    def user_ids(self) -> set[str]:
        return {s.user_id for s in self.scenarios}


def _slot_values(slot: str, count: int) -> list[str]:
    if slot == "location":
        n_states = min(len(_STATES), max(1, count))
        cities = []
        i = 0
        while len(cities) < count:
            stem = _CITY_STEMS[i % len(_CITY_STEMS)]
            suffix = _CITY_SUFFIXES[(i // len(_CITY_STEMS)) % len(_CITY_SUFFIXES)]
            state = _STATES[i % n_states]
            name = f"{stem}{suffix},{state}"
            if name not in cities:
                cities.append(name)
            i += 1
        return cities[:count]
    base = _BASE_VALUES[slot]
    out = list(base[:count])
    n = 0
    while len(out) < count:
        candidate = f"{slot}_style_{n:03d}" if slot == "category" else f"{slot}_{n:03d}"
        if candidate not in out:
            out.append(candidate)
        n += 1
    return out


def region_of_location(value_id: str) -> str:
    return value_id.rsplit(",", 1)[-1]


def synthesize_catalog(config: CatalogConfig | None = None) -> Catalog:
    """Deterministically build a catalog from the config's counts and seed.

    Every item gets one location, one price, 1-3 categories and, with
    ``optional_slot_rate`` probability each, one value for every remaining
    slot.
    """
    config = config or CatalogConfig()
    counts = dict(DEFAULT_VALUE_COUNTS)
    counts.update(config.values_per_slot)
    for essential in ("category", "location", "price"):
        if counts.get(essential, 0) < 1:
            raise GenerationError(f"catalog needs at least one {essential} value")

    values: list[CatalogValue] = []
    seen: set[str] = set()
    for slot in SLOTS:
        for name in _slot_values(slot, counts[slot]):
            if name in seen:
                raise GenerationError(f"value name {name!r} not unique across slots")
            seen.add(name)
            values.append(CatalogValue(value_id=name, name=name, slot_id=slot))
    by_slot = {s: [v.value_id for v in values if v.slot_id == s] for s in SLOTS}

    rng = random.Random(f"catalog:{config.seed}")
    optional_slots = [s for s in SLOTS if s not in ("category", "location", "price")]
    items: list[CatalogItem] = []
    used_names: set[str] = set()
    for n in range(config.n_items):
        adj = _ITEM_ADJECTIVES[n % len(_ITEM_ADJECTIVES)]
        noun = _ITEM_NOUNS[(n // len(_ITEM_ADJECTIVES)) % len(_ITEM_NOUNS)]
        name = f"{adj}_{noun}"
        if name in used_names:
            name = f"{name}_{n:03d}"
        used_names.add(name)

        location = rng.choice(by_slot["location"])
        price = rng.choice(by_slot["price"])
        n_cat = rng.randint(1, min(3, len(by_slot["category"])))
        categories = rng.sample(by_slot["category"], n_cat)
        vals = {location, price, *categories}
        for slot in optional_slots:
            if by_slot[slot] and rng.random() < config.optional_slot_rate:
                vals.add(rng.choice(by_slot[slot]))
        items.append(
            CatalogItem(
                item_id=name,
                name=name,
                values=tuple(sorted(vals)),
                region=region_of_location(location),
            )
        )
    return Catalog(values, items)


def _non_location_values(catalog: Catalog, item: CatalogItem) -> frozenset[str]:
    return frozenset(
        v for v in item.values if catalog.slot_of(v) != "location"
    )


def generate_scenario(
    catalog: Catalog,
    user_id: str,
    with_history: bool,
    seed: int | str,
    max_truth_retries: int = 64,
) -> Scenario:
    """Sample one scenario for ``user_id``.

    The candidate set shares the ground truth's region, and at least half of
    the distractors share at least one non-location value with it. The
    history draw uses an independent substream so the with/without-history
    twins agree on candidates, preference and ground truth.
    """
    rng = random.Random(f"{seed}:{user_id}:core")
    all_items = sorted(catalog.items)
    if len(all_items) < 2:
        raise GenerationError("catalog too small to sample a scenario")

    n_c = rng.randint(10, 20)
    n_distract = n_c - 1
    n_share = math.ceil(n_distract / 2)

    scenario = None
    for _ in range(max_truth_retries):
        truth_id = rng.choice(all_items)
        truth = catalog.items[truth_id]
        mates = [i for i in catalog.items_in_region(truth.region) if i != truth_id]
        if len(mates) < n_distract:
            continue
        truth_nl = _non_location_values(catalog, truth)
        sharers = [
            i
            for i in mates
            if _non_location_values(catalog, catalog.items[i]) & truth_nl
        ]
        if len(sharers) < n_share:
            continue
        shared = rng.sample(sorted(sharers), n_share)
        rest_pool = sorted(set(mates) - set(shared))
        if len(rest_pool) < n_distract - n_share:
            continue
        rest = rng.sample(rest_pool, n_distract - n_share)
        candidates = [truth_id] + shared + rest
        rng.shuffle(candidates)
        scenario = (truth_id, candidates)
        break
    if scenario is None:
        raise GenerationError(
            "could not satisfy candidate similarity (same region, >=50% of "
            f"distractors sharing a non-location value) for user {user_id}"
        )
    truth_id, candidates = scenario

    preference: dict[str, list[str]] = {}
    for vid in catalog.items[truth_id].values:
        preference.setdefault(catalog.slot_of(vid), []).append(vid)

    history: tuple[str, ...] = ()
    if with_history:
        rng_h = random.Random(f"{seed}:{user_id}:history")
        pool = [i for i in all_items if i != truth_id]
        history = tuple(rng_h.sample(pool, min(rng_h.randint(5, 20), len(pool))))

    referenced = list(dict.fromkeys(list(candidates) + list(history)))
    item_values = catalog.item_value_map(referenced)
    value_ids = sorted({v for vals in item_values.values() for v in vals})
    result = Scenario(
        scenario_id=f"{user_id}-h{1 if with_history else 0}",
        user_id=user_id,
        candidates=tuple(candidates),
        history=history,
        preference={s: tuple(sorted(v)) for s, v in preference.items()},
        ground_truth=(truth_id,),
        with_history=with_history,
        item_values=item_values,
        value_slots=catalog.value_slot_map(value_ids),
    )
    result.validate()
    return result


def generate_split(
    catalog: Catalog, counts: Mapping[str, int], seed: int | str
) -> dict[str, ScenarioSet]:
    """Scenario sets for train/dev/test with disjoint user populations.

    Each user contributes a with-history and a without-history scenario, so a
    split of ``n`` users holds ``2n`` scenarios.
    """
    for split, n in counts.items():
        if n <= 0:
            raise GenerationError(f"{split} user count must be positive")
    sets: dict[str, ScenarioSet] = {}
    for split in ("train", "dev", "test"):
        n_users = counts.get(split, 0)
        scenarios: list[Scenario] = []
        for u in range(n_users):
            user_id = f"{split}_u{u:05d}"
            for with_history in (True, False):
                scenarios.append(
                    generate_scenario(catalog, user_id, with_history, seed)
                )
        sets[split] = ScenarioSet(split=split, scenarios=tuple(scenarios))
    return sets


# -- JSON Lines persistence ------------------------------------------------

def write_catalog(catalog: Catalog, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for vid in sorted(catalog.values):
            v = catalog.values[vid]
            fh.write(json.dumps(
                {"kind": "value", "value_id": v.value_id, "name": v.name, "slot_id": v.slot_id},
                sort_keys=True,
            ) + "\n")
        for iid in sorted(catalog.items):
            i = catalog.items[iid]
            fh.write(json.dumps(
                {"kind": "item", "item_id": i.item_id, "name": i.name,
                 "values": list(i.values), "region": i.region},
                sort_keys=True,
            ) + "\n")


def read_catalog(path: str | Path) -> Catalog:
    values: list[CatalogValue] = []
    items: list[CatalogItem] = []
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GenerationError(f"{path}:{n}: invalid JSON ({exc})") from exc
            if rec.get("kind") == "value":
                values.append(CatalogValue(rec["value_id"], rec["name"], rec["slot_id"]))
            elif rec.get("kind") == "item":
                items.append(CatalogItem(
                    rec["item_id"], rec["name"], tuple(rec["values"]), rec["region"]
                ))
            else:
                raise GenerationError(f"{path}:{n}: unknown record kind {rec.get('kind')!r}")
    return Catalog(values, items)


def write_scenarios(scenario_set: ScenarioSet, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in scenario_set.scenarios:
            rec = {"split": scenario_set.split, **s.to_dict()}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_scenarios(path: str | Path) -> ScenarioSet:
    scenarios: list[Scenario] = []
    split = ""
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GenerationError(f"{path}:{n}: invalid JSON ({exc})") from exc
            split = rec.pop("split", split)
            scenarios.append(Scenario.from_dict(rec))
    return ScenarioSet(split=split or "unknown", scenarios=tuple(scenarios))
