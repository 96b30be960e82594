"""Identity manifest, identity hash, and the explicit re-key operations.

The identity hash covers six frozen fields: the behavioural prompt, the
digests of the environment and runtime policy documents, the digest of the
sorted capability *names*, the persona digest, and the runtime version.
Capability versions (active or provisional) are deliberately left out, which
is what lets a canary upgrade run without touching identity. The strawman
flag folds the version maps back in to show the drift that design avoids.
"""

from __future__ import annotations

import hashlib
import os
import re
from contextlib import contextmanager
from contextvars import ContextVar
from collections.abc import MutableMapping
from dataclasses import dataclass, field, fields, replace
from functools import total_ordering
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Set

from .audit import AuditChain, AuditKind
from .encoding import length_prefixed

NAME_RE = re.compile(r"[a-z0-9_-]{1,64}")
SEMVER_RE = re.compile(r"v?(0|[1-9]\d*)\.(0|[1-9]\d*)\.(0|[1-9]\d*)")

MANIFEST_FIELDS = ("m_prompt", "h_env", "h_policy", "h_registry", "h_persona", "v_rt")

STRAWMAN_ENV_KEYS = ("IDENTITY_INCLUDES_VERSIONS",)

_hook_scope: ContextVar[Optional[str]] = ContextVar("hook_scope", default=None)


@contextmanager
def hook_scope(name: str):
    """Mark the current task as running a pipeline hook; manifest writes are then refused."""
    token = _hook_scope.set(name)
    try:
        yield
    finally:
        _hook_scope.reset(token)


class IdentityError(Exception):
    """Base class for identity-core failures."""


class InvalidNameError(IdentityError, ValueError):
    pass


class InvalidVersionError(IdentityError, ValueError):
    pass


class DuplicateNameError(IdentityError):
    def __init__(self, name: str) -> None:
        super().__init__(f"capability {name!r} is already registered")
        self.name = name


class UnknownNameError(IdentityError, KeyError):
    def __init__(self, name: str) -> None:
        super().__init__(f"capability {name!r} is not registered")
        self.name = name


class ActiveJobConflict(IdentityError):
    def __init__(self, name: str, job_id: str) -> None:
        super().__init__(f"capability {name!r} has active evolution job {job_id}")
        self.name = name
        self.job_id = job_id


class RekeyNotAcknowledged(IdentityError):
    pass


class ManifestFrozenError(IdentityError):
    """A manifest field was written while the manifest guard was refusing writes."""

    def __init__(self, transition: Optional[str], fields_written: Iterable[str]) -> None:
        written = sorted(fields_written)
        super().__init__(f"manifest write during {transition or 'pipeline'}: {', '.join(written)}")
        self.transition = transition
        self.fields = written


def validate_name(name: str) -> str:
    if not isinstance(name, str) or not NAME_RE.fullmatch(name):
        raise InvalidNameError(f"invalid capability name: {name!r}")
    return name


@total_ordering
@dataclass(frozen=True)
class SemVer:
    major: int
    minor: int
    patch: int

    def __post_init__(self) -> None:
        for part in (self.major, self.minor, self.patch):
            if not isinstance(part, int) or isinstance(part, bool) or part < 0:
                raise InvalidVersionError(f"version components must be non-negative ints: {self!r}")

    @classmethod
    def parse(cls, text: "str | SemVer") -> "SemVer":
        if isinstance(text, SemVer):
            return text
        m = SEMVER_RE.fullmatch(text.strip()) if isinstance(text, str) else None
        if m is None:
            raise InvalidVersionError(f"not a semantic version: {text!r}")
        return cls(int(m.group(1)), int(m.group(2)), int(m.group(3)))

    def _key(self):
        return (self.major, self.minor, self.patch)

    def __lt__(self, other: "SemVer") -> bool:
        if not isinstance(other, SemVer):
            return NotImplemented
        return self._key() < other._key()

    def bump_patch(self) -> "SemVer":
        return SemVer(self.major, self.minor, self.patch + 1)

    def __str__(self) -> str:
        return f"v{self.major}.{self.minor}.{self.patch}"


def sha256(data: "bytes | str") -> bytes:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).digest()


def compute_registry_hash(names: Iterable[str]) -> bytes:
    """SHA-256 of the byte-sorted names joined by ``\\n``; order of input is irrelevant."""
    ordered = sorted(set(names), key=lambda n: n.encode("utf-8"))
    return sha256("\n".join(ordered))


@dataclass(frozen=True)
class IdentityManifest:
    m_prompt: str
    h_env: bytes
    h_policy: bytes
    h_registry: bytes
    h_persona: bytes
    v_rt: str

    def encode(self) -> bytes:
        return length_prefixed(*(getattr(self, f) for f in MANIFEST_FIELDS))

    def changed_fields(self, other: "IdentityManifest") -> Set[str]:
        return {f for f in MANIFEST_FIELDS if getattr(self, f) != getattr(other, f)}

    def as_json(self) -> Dict[str, str]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.hex() if isinstance(value, bytes) else value
        return out


@dataclass(frozen=True)
class IdentityHash:
    digest: bytes

    @property
    def hex(self) -> str:
        return self.digest.hex()

    @property
    def prefix(self) -> str:
        return self.digest.hex()[:8]

    def __str__(self) -> str:
        return self.hex


class ManifestGuard:
    """Records which fields each pipeline transition writes.

    While a guard is attached to an :class:`AgentState`, every write to the
    version maps, the audit log, job metadata, or any manifest field is
    recorded under the guard's current transition label. With ``refuse=True``
    a manifest write raises :class:`ManifestFrozenError` after being recorded.
    """

    def __init__(self, refuse: bool = True) -> None:
        self.refuse = refuse
        self.transition: Optional[str] = None
        self.writes: Dict[str, Set[str]] = {}
        self.order: List[str] = []

    def begin(self, transition: str) -> None:
        self.transition = transition
        if transition not in self.writes:
            self.writes[transition] = set()
            self.order.append(transition)

    def end(self) -> None:
        self.transition = None

    def record(self, name: str) -> None:
        if self.transition is None:
            return
        self.writes[self.transition].add(name)

    def manifest_write(self, changed: Iterable[str], hook: Optional[str] = None) -> None:
        changed = set(changed)
        label = self.transition or (f"hook:{hook}" if hook else None)
        if label is None or not changed:
            return
        self.writes.setdefault(label, set()).update(changed)
        if label not in self.order:
            self.order.append(label)
        if self.refuse:
            raise ManifestFrozenError(label, changed)


class VersionMap(MutableMapping):
    """``name -> SemVer`` map that reports writes to the owning state's guard."""

    def __init__(self, label: str, entries: Optional[Mapping[str, SemVer]] = None) -> None:
        self.label = label
        self._data: Dict[str, SemVer] = {}
        self._owner: Optional["AgentState"] = None
        for k, v in (entries or {}).items():
            self._data[validate_name(k)] = SemVer.parse(v)

    def _touch(self) -> None:
        if self._owner is not None and self._owner.guard is not None:
            self._owner.guard.record(self.label)

    def __getitem__(self, key: str) -> SemVer:
        return self._data[key]

    def __setitem__(self, key: str, value: SemVer) -> None:
        self._touch()
        self._data[key] = SemVer.parse(value)

    def __delitem__(self, key: str) -> None:
        self._touch()
        del self._data[key]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._data))

    def __len__(self) -> int:
        return len(self._data)

    def snapshot(self) -> Dict[str, str]:
        return {k: str(self._data[k]) for k in sorted(self._data)}

    def __repr__(self) -> str:
        return f"VersionMap({self.label}, {self.snapshot()})"


def strawman_blob(active: Mapping[str, SemVer], provisional: Mapping[str, SemVer]) -> bytes:
    def pairs(m: Mapping[str, SemVer]) -> bytes:
        items = sorted(m.items(), key=lambda kv: kv[0].encode("utf-8"))
        return b"\n".join(f"{k}={v}".encode("utf-8") for k, v in items)

    return pairs(active) + b"\x1e" + pairs(provisional)


def strawman_from_env(environ: Optional[Mapping[str, str]] = None) -> bool:
    env = os.environ if environ is None else environ
    return any(env.get(k, "").strip().lower() in ("1", "true", "yes", "on") for k in STRAWMAN_ENV_KEYS)


@dataclass(eq=False)
class AgentState:
    manifest: IdentityManifest
    names: frozenset
    active: VersionMap
    provisional: VersionMap
    persona: str
    env_policy_doc: str
    runtime_policy_doc: str
    strawman_flag: bool = False
    audit: AuditChain = field(default_factory=AuditChain)
    guard: Optional[ManifestGuard] = None

    def __post_init__(self) -> None:
        self.active._owner = self
        self.provisional._owner = self

    def __setattr__(self, key, value) -> None:
        guard = self.__dict__.get("guard")
        if key == "manifest" and guard is not None and "manifest" in self.__dict__:
            guard.manifest_write(self.__dict__["manifest"].changed_fields(value), _hook_scope.get())
        super().__setattr__(key, value)

    @classmethod
    def create(
        cls,
        names: Iterable[str],
        initial_version: "str | SemVer | Mapping[str, str | SemVer]" = "v1.0.0",
        *,
        m_prompt: str = "You are a careful embodied assistant.",
        persona: str = "default-operator-persona",
        env_policy_doc: str = "env_policies: {}\n",
        runtime_policy_doc: str = "policy: {}\n",
        v_rt: str = "0.6.0",
        strawman_flag: Optional[bool] = None,
        audit: Optional[AuditChain] = None,
    ) -> "AgentState":
        name_set = frozenset(validate_name(n) for n in names)
        if isinstance(initial_version, Mapping):
            versions = {n: SemVer.parse(initial_version[n]) for n in name_set}
        else:
            v = SemVer.parse(initial_version)
            versions = {n: v for n in name_set}
        manifest = IdentityManifest(
            m_prompt=m_prompt,
            h_env=sha256(env_policy_doc),
            h_policy=sha256(runtime_policy_doc),
            h_registry=compute_registry_hash(name_set),
            h_persona=sha256(persona),
            v_rt=v_rt,
        )
        state = cls(
            manifest=manifest,
            names=name_set,
            active=VersionMap("V", versions),
            provisional=VersionMap("Vp"),
            persona=persona,
            env_policy_doc=env_policy_doc,
            runtime_policy_doc=runtime_policy_doc,
            strawman_flag=strawman_from_env() if strawman_flag is None else strawman_flag,
            audit=audit if audit is not None else AuditChain(),
        )
        state.audit.append(AuditKind.REKEY, "create names=" + ",".join(sorted(name_set)), state.identity())
        return state

    def sorted_names(self) -> List[str]:
        return sorted(self.names, key=lambda n: n.encode("utf-8"))

    def identity(self) -> IdentityHash:
        return compute_identity_hash(self)

    def append_audit(self, kind: AuditKind, payload: str):
        if self.guard is not None:
            self.guard.record("audit_log")
        return self.audit.append(kind, payload, self.identity())


def compute_identity_hash(state: AgentState) -> IdentityHash:
    encoded = state.manifest.encode()
    if state.strawman_flag:
        encoded += length_prefixed(strawman_blob(state.active, state.provisional))
    return IdentityHash(hashlib.sha256(encoded).digest())


def register_capability(state: AgentState, name: str, initial: "str | SemVer") -> AgentState:
    validate_name(name)
    version = SemVer.parse(initial)
    if name in state.names:
        raise DuplicateNameError(name)
    names = state.names | {name}
    state.manifest = replace(state.manifest, h_registry=compute_registry_hash(names))
    state.names = names
    state.active[name] = version
    state.append_audit(AuditKind.REKEY, f"register {name} {version}")
    return state


def deregister_capability(state: AgentState, name: str, job_store=None) -> AgentState:
    if name not in state.names:
        raise UnknownNameError(name)
    if job_store is not None:
        job_id = job_store.find_active_for_capability(name)
        if job_id is not None:
            raise ActiveJobConflict(name, job_id)
    names = state.names - {name}
    state.manifest = replace(state.manifest, h_registry=compute_registry_hash(names))
    state.names = names
    state.active.pop(name, None)
    state.provisional.pop(name, None)
    state.append_audit(AuditKind.REKEY, f"deregister {name}")
    return state


def set_persona(state: AgentState, persona: str, *, acknowledge_rekey: bool = False) -> AgentState:
    if not acknowledge_rekey:
        raise RekeyNotAcknowledged("persona edits change identity and need an explicit re-key acknowledgement")
    new_digest = sha256(persona)
    state.persona = persona
    if new_digest != state.manifest.h_persona:
        state.manifest = replace(state.manifest, h_persona=new_digest)
        state.append_audit(AuditKind.REKEY, "persona")
    return state


def set_policy_documents(
    state: AgentState, env_doc: Optional[str] = None, runtime_doc: Optional[str] = None
) -> AgentState:
    if env_doc is None and runtime_doc is None:
        raise IdentityError("at least one policy document is required")
    updates = {}
    if env_doc is not None:
        state.env_policy_doc = env_doc
        if sha256(env_doc) != state.manifest.h_env:
            updates["h_env"] = sha256(env_doc)
    if runtime_doc is not None:
        state.runtime_policy_doc = runtime_doc
        if sha256(runtime_doc) != state.manifest.h_policy:
            updates["h_policy"] = sha256(runtime_doc)
    if updates:
        state.manifest = replace(state.manifest, **updates)
        state.append_audit(AuditKind.REKEY, "policy " + ",".join(sorted(updates)))
    return state
