"""Versioned, append-only experience base with alias tracking and on-disk snapshots."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .canonicalize import QATuple
from .clustering import Cluster, clusters_from_jsonl, clusters_to_jsonl
from .distill import ExperienceRule
from .errors import CorruptManifest, StaleParent, VersionGap

MANIFEST = "manifest.json"


@dataclass(frozen=True)
class ExperienceBaseVersion:
    version: int
    rules: Mapping[str, ExperienceRule]
    aliases: Mapping[str, str] = field(default_factory=dict)
    parent: int | None = None
    created_at: str = ""
    config_digest: str = ""
    clusters: tuple[Cluster, ...] = ()
    tuples: Mapping[str, QATuple] = field(default_factory=dict)
    retired: frozenset[str] = frozenset()

    def resolve(self, rule_id: str) -> str:
        """Follow the alias chain to a live rule id."""
        seen = set()
        while rule_id in self.aliases:
            if rule_id in seen:
                raise CorruptManifest(f"alias cycle at {rule_id}")
            seen.add(rule_id)
            rule_id = self.aliases[rule_id]
        if rule_id not in self.rules:
            raise KeyError(rule_id)
        return rule_id

    def rule(self, rule_id: str) -> ExperienceRule:
        return self.rules[self.resolve(rule_id)]

    def known_ids(self) -> set[str]:
        return set(self.rules) | set(self.aliases) | set(self.retired)

    def __eq__(self, other):
        if not isinstance(other, ExperienceBaseVersion):
            return NotImplemented
        return (
            self.version == other.version
            and dict(self.rules) == dict(other.rules)
            and dict(self.aliases) == dict(other.aliases)
            and self.parent == other.parent
            and self.created_at == other.created_at
            and self.config_digest == other.config_digest
            and tuple(self.clusters) == tuple(other.clusters)
            and dict(self.tuples) == dict(other.tuples)
        )

    __hash__ = None


def empty_base(config_digest: str = "") -> ExperienceBaseVersion:
    """Version 0: the root of every commit log."""
    return ExperienceBaseVersion(0, {}, {}, None, "", config_digest)


@dataclass(frozen=True)
class ChangeSet:
    adds: tuple[ExperienceRule, ...] = ()
    updates: tuple[ExperienceRule, ...] = ()
    merges: tuple[tuple[str, str], ...] = ()
    removes: tuple[str, ...] = ()

    def is_empty(self) -> bool:
        return not (self.adds or self.updates or self.merges or self.removes)


def _now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def merge_rules(a: ExperienceRule, b: ExperienceRule, version: int) -> ExperienceRule:
    """Survivor is the smaller id; citations are the union of both."""
    keep, gone = (a, b) if a.rule_id <= b.rule_id else (b, a)
    cites = sorted(set(keep.citations) | set(gone.citations), key=lambda r: (r.url_or_name, r.quote))
    return replace(keep, citations=tuple(cites), version=version)


def commit_version(
    base: ExperienceBaseVersion,
    changes: ChangeSet = ChangeSet(),
    clusters: Sequence[Cluster] | None = None,
    tuples: Mapping[str, QATuple] | None = None,
    config_digest: str | None = None,
    created_at: str | None = None,
) -> ExperienceBaseVersion:
    """Apply ``changes`` to ``base`` and return the next immutable snapshot.

    Order: adds, updates, merges, removes. Rule ids are never reused.
    """
    v = base.version + 1
    rules = dict(base.rules)
    aliases = dict(base.aliases)
    retired = set(base.retired)
    known = base.known_ids()
    for r in changes.adds:
        if r.rule_id in known or r.rule_id in rules:
            raise ValueError(f"rule id {r.rule_id} already used")
        rules[r.rule_id] = r
    for r in changes.updates:
        if r.rule_id not in rules:
            raise KeyError(f"update of unknown rule {r.rule_id}")
        rules[r.rule_id] = r
    for a, b in changes.merges:
        ra, rb = rules[a], rules[b]
        survivor = merge_rules(ra, rb, v)
        loser = b if survivor.rule_id == a else a
        del rules[loser]
        rules[survivor.rule_id] = survivor
        aliases[loser] = survivor.rule_id
        for old, tgt in list(aliases.items()):
            if tgt == loser:
                aliases[old] = survivor.rule_id
    for rid in changes.removes:
        rules.pop(rid)
        retired.add(rid)
        for old, tgt in list(aliases.items()):
            if tgt == rid:
                del aliases[old]
                retired.add(old)
    return ExperienceBaseVersion(
        v,
        dict(sorted(rules.items())),
        dict(sorted(aliases.items())),
        base.version,
        created_at if created_at is not None else _now(),
        base.config_digest if config_digest is None else config_digest,
        tuple(clusters) if clusters is not None else base.clusters,
        dict(tuples) if tuples is not None else dict(base.tuples),
        frozenset(retired),
    )


# ------------------------------------------------------------ serialization

def rules_jsonl(base: ExperienceBaseVersion) -> str:
    return "".join(json.dumps(base.rules[r].to_json(), sort_keys=True, ensure_ascii=False) + "\n" for r in sorted(base.rules))


def _aliases_json(base: ExperienceBaseVersion) -> str:
    obj = {"aliases": dict(sorted(base.aliases.items())), "retired": sorted(base.retired)}
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _tuples_jsonl(base: ExperienceBaseVersion) -> str:
    return "".join(json.dumps(base.tuples[t].to_json(), sort_keys=True, ensure_ascii=False) + "\n" for t in sorted(base.tuples))


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _version_files(base: ExperienceBaseVersion) -> dict[str, bytes]:
    v = base.version
    return {
        f"rules-{v}.jsonl": rules_jsonl(base).encode("utf-8"),
        f"aliases-{v}.json": _aliases_json(base).encode("utf-8"),
        f"clusters-{v}.jsonl": clusters_to_jsonl(base.clusters).encode("utf-8"),
        f"tuples-{v}.jsonl": _tuples_jsonl(base).encode("utf-8"),
    }


def read_manifest(path: str | Path) -> dict:
    mpath = Path(path) / MANIFEST
    if not mpath.exists():
        raise CorruptManifest(f"{mpath} missing")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        versions = manifest["versions"]
        latest = int(manifest["latest_version"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptManifest(f"{mpath}: {exc}") from exc
    nums = [int(e["version"]) for e in versions]
    if nums != list(range(1, len(nums) + 1)) or (nums and latest != nums[-1]):
        raise VersionGap(f"manifest versions {nums} (latest {latest}) are not contiguous from 1")
    return manifest


def save_base(base: ExperienceBaseVersion, path: str | Path) -> None:
    """Append ``base`` as the next version of the store at ``path``.

    The version files are written first, then the manifest is replaced
    atomically, so readers never see a partial snapshot. Re-saving the latest
    version is a no-op if the bytes match.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    if (root / MANIFEST).exists():
        manifest = read_manifest(root)
    else:
        manifest = {"latest_version": 0, "versions": []}
    latest = manifest["latest_version"]
    files = _version_files(base)
    entry = {
        "version": base.version,
        "parent": base.parent,
        "config_digest": base.config_digest,
        "created_at": base.created_at,
        "files": {name: _digest(data) for name, data in sorted(files.items())},
    }
    if base.version <= latest:
        existing = manifest["versions"][base.version - 1]
        if existing == entry:
            return
        raise StaleParent(f"version {base.version} already exists in {root}")
    if base.version != latest + 1 or (base.parent or 0) != latest:
        raise StaleParent(f"store at {root} is at version {latest}; cannot append version {base.version} (parent {base.parent})")
    for name, data in files.items():
        _atomic_write(root / name, data)
    manifest["versions"].append(entry)
    manifest["latest_version"] = base.version
    _atomic_write(root / MANIFEST, (json.dumps(manifest, sort_keys=True, indent=1) + "\n").encode("utf-8"))


def _read_checked(root: Path, name: str, digest: str) -> str:
    p = root / name
    if not p.exists():
        raise VersionGap(f"{p} referenced by manifest but missing")
    data = p.read_bytes()
    if _digest(data) != digest:
        raise CorruptManifest(f"{p} does not match its manifest digest (truncated or edited)")
    return data.decode("utf-8")


def load_base(path: str | Path, version: int | None = None) -> ExperienceBaseVersion:
    """Load one snapshot (latest by default), verifying file digests."""
    root = Path(path)
    manifest = read_manifest(root)
    if not manifest["versions"]:
        raise VersionGap(f"{root} has no versions")
    v = manifest["latest_version"] if version is None else version
    if not 1 <= v <= len(manifest["versions"]):
        raise VersionGap(f"version {v} not in {root}")
    entry = manifest["versions"][v - 1]
    files = entry["files"]
    try:
        texts = {kind: _read_checked(root, f"{kind}-{v}.{ext}", files[f"{kind}-{v}.{ext}"])
                 for kind, ext in (("rules", "jsonl"), ("aliases", "json"), ("clusters", "jsonl"), ("tuples", "jsonl"))}
    except KeyError as exc:
        raise CorruptManifest(f"manifest entry for version {v} lacks {exc}") from exc
    try:
        rules = [ExperienceRule.from_json(json.loads(line)) for line in texts["rules"].splitlines() if line.strip()]
        alias_obj = json.loads(texts["aliases"])
        tuples = [QATuple.from_json(json.loads(line)) for line in texts["tuples"].splitlines() if line.strip()]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptManifest(f"version {v}: {exc}") from exc
    lookup = {t.id: t for t in tuples}
    clusters = clusters_from_jsonl(texts["clusters"], lookup)
    return ExperienceBaseVersion(
        v,
        {r.rule_id: r for r in rules},
        dict(alias_obj.get("aliases", {})),
        entry.get("parent"),
        entry.get("created_at", ""),
        entry.get("config_digest", ""),
        tuple(clusters),
        lookup,
        frozenset(alias_obj.get("retired", ())),
    )


def load_history(path: str | Path) -> list[ExperienceBaseVersion]:
    manifest = read_manifest(path)
    return [load_base(path, e["version"]) for e in manifest["versions"]]


def rules_file_bytes(path: str | Path, version: int) -> bytes:
    return (Path(path) / f"rules-{version}.jsonl").read_bytes()


class ExperienceStore:
    """Single-writer wrapper: commits must build on the current latest version."""

    def __init__(self, path: str | Path | None = None, initial: ExperienceBaseVersion | None = None):
        self.path = Path(path) if path is not None else None
        if initial is None and self.path is not None and (self.path / MANIFEST).exists():
            initial = load_base(self.path)
        self._latest = initial or empty_base()

    @property
    def latest(self) -> ExperienceBaseVersion:
        return self._latest

    def commit(self, new: ExperienceBaseVersion) -> ExperienceBaseVersion:
        if new.parent != self._latest.version or new.version != self._latest.version + 1:
            raise StaleParent(f"parent {new.parent} is not the latest version {self._latest.version}")
        if self.path is not None:
            save_base(new, self.path)
        self._latest = new
        return new

    def commit_changes(self, parent: ExperienceBaseVersion, changes: ChangeSet, **kwargs) -> ExperienceBaseVersion:
        if parent.version != self._latest.version:
            raise StaleParent(f"parent {parent.version} is not the latest version {self._latest.version}")
        return self.commit(commit_version(parent, changes, **kwargs))


def iter_alias_chain(base: ExperienceBaseVersion, rule_id: str) -> Iterable[str]:
    yield rule_id
    while rule_id in base.aliases:
        rule_id = base.aliases[rule_id]
        yield rule_id
