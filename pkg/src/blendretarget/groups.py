"""Landmark regions, region groups, and the target -> feature-source mapping."""

from dataclasses import dataclass, field

from .errors import InvalidArgument
from .landmarks import DEFAULT_REGIONS, N_LANDMARKS

DEFAULT_GROUPS = {
    "mouth": ("teeth", "lips"),
    "eyes": ("eye-right", "eye-left"),
    "brows": ("eyebrow-right", "eyebrow-left"),
    "nasal": ("nose", "nostril"),
}


@dataclass(frozen=True)
class RegionPartition:
    regions: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_REGIONS.items()})

    def __post_init__(self):
        seen = set()
        for name, idx in self.regions.items():
            for i in idx:
                if not 0 <= i < N_LANDMARKS:
                    raise InvalidArgument(f"region {name!r}: landmark index {i} out of range")
                if i in seen:
                    raise InvalidArgument(f"region {name!r}: landmark {i} already used by another region")
                seen.add(i)

    @property
    def names(self):
        return list(self.regions)

    def to_dict(self):
        return {k: list(v) for k, v in self.regions.items()}


@dataclass(frozen=True)
class GroupSpec:
    """Which regions feed each group, and which region or group feeds each target head."""

    groups: dict
    target_source: dict

    def validate(self, partition, target_names):
        regions = set(partition.regions)
        for g, members in self.groups.items():
            if g in regions:
                raise InvalidArgument(f"group {g!r} shadows a region name")
            missing = set(members) - regions
            if missing or not members:
                raise InvalidArgument(f"group {g!r} references unknown regions {sorted(missing)}")
        if set(self.target_source) != set(target_names):
            extra = set(self.target_source) ^ set(target_names)
            raise InvalidArgument(f"target_source must map every target exactly once; mismatch: {sorted(extra)}")
        for t, src in self.target_source.items():
            if src not in regions and src not in self.groups:
                raise InvalidArgument(f"target {t!r} maps to unknown source {src!r}")

    def to_dict(self):
        return {
            "groups": {g: list(m) for g, m in self.groups.items()},
            "target_source": dict(self.target_source),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            groups={g: tuple(m) for g, m in d["groups"].items()},
            target_source=dict(d["target_source"]),
        )


def _source_for(name):
    side = "left" if name.endswith("_l") else "right" if name.endswith("_r") else None
    if name.startswith("brow_"):
        return f"eyebrow-{side}" if side else "brows"
    if name.startswith("eye_"):
        return f"eye-{side}" if side else "eyes"
    if name.startswith("nose_"):
        return "nasal"
    if name.startswith(("mouth_", "viseme_")):
        return "mouth"
    return None


def default_group_spec(target_names):
    """Derive the target -> source map from target-name prefixes.

    Side suffixes ``_l``/``_r`` pick the subject's left/right region; unsided
    eye and brow targets read the two-sided group.
    """
    source = {}
    for name in target_names:
        src = _source_for(name)
        if src is None:
            raise InvalidArgument(f"cannot derive a region for target {name!r}; supply target_source explicitly")
        source[name] = src
    used = set(source.values())
    groups = {g: m for g, m in DEFAULT_GROUPS.items() if g in used or g == "mouth"}
    return GroupSpec(groups=groups, target_source=source)
