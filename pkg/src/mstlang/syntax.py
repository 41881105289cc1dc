"""Core abstract syntax: class session types, channel session types, value
types, field typings, expressions, declarations, heaps, paths and
configurations, together with the pure structural operations on them
(unfolding, path resolution, heap separation, renaming).

Branch entries keep their source order but compare as sets keyed by
(method name, parameter type); variants compare as label-keyed maps.
Recursive types compare up to alpha-renaming of their bound variables.
All values here are immutable; heap/configuration updates build new values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional


class CoreError(Exception):
    """Base for errors raised by structural heap/type operations."""


class PathUndefined(CoreError):
    pass


class NoSuchField(CoreError):
    pass


class NotARoot(CoreError):
    pass


class IncompleteHeap(CoreError):
    pass


class NotInjective(CoreError):
    pass


class HeapConflict(CoreError):
    """Disjoint union attempted on heaps with overlapping domains."""


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

class Type:
    """Base class for all type forms.

    Equality and hashing go through a canonical form so that branch entry
    order, variant case order and mu-variable names are irrelevant.
    """

    __slots__ = ("_canon",)

    def canon(self):
        c = getattr(self, "_canon", None)
        if c is None:
            c = self._canonical((), {})
            object.__setattr__(self, "_canon", c)
        return c

    def _canonical(self, bound, memo):
        raise NotImplementedError

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Type):
            return NotImplemented
        return self.canon() == other.canon()

    def __ne__(self, other):
        r = self.__eq__(other)
        return r if r is NotImplemented else not r

    def __hash__(self):
        return hash(self.canon())

    def __repr__(self):
        from .render import render_type

        return render_type(self)


class SessionType(Type):
    """Class session types S: branch, variant, rec, or type variable."""

    __slots__ = ()


class ValueType(Type):
    """Top-level value types T: Null, enumerations, sessions, linkthis.

    Session types are value types directly. ``link f`` is internal only.
    """

    __slots__ = ()


class ChannelType(Type):
    """Channel session types: end, ?T.S, !T.S, offer, select, rec, var."""

    __slots__ = ()


def _canon_seq(items, bound, memo):
    return tuple(t._canonical(bound, memo) for t in items)


@dataclass(frozen=True, eq=False, repr=False)
class NullType(ValueType):
    __slots__ = ()

    def _canonical(self, bound, memo):
        return ("null",)


NULL_T = NullType()


@dataclass(frozen=True, eq=False, repr=False)
class EnumType(ValueType):
    labels: frozenset

    __slots__ = ("labels",)

    def __post_init__(self):
        if not self.labels:
            raise ValueError("enumerated types have at least one label")
        object.__setattr__(self, "labels", frozenset(self.labels))

    def _canonical(self, bound, memo):
        return ("enum", tuple(sorted(self.labels)))


@dataclass(frozen=True, eq=False, repr=False)
class LinkThis(ValueType):
    __slots__ = ()

    def _canonical(self, bound, memo):
        return ("linkthis",)


LINK_THIS = LinkThis()


@dataclass(frozen=True, eq=False, repr=False)
class LinkField(ValueType):
    """Internal type ``link f``: a tag tied to the variant type of field f."""

    field: str

    __slots__ = ("field",)

    def _canonical(self, bound, memo):
        return ("link", self.field)


@dataclass(frozen=True, eq=False, repr=False)
class MethodSig:
    """One branch entry: ``result name(param): cont``."""

    name: str
    param: ValueType
    result: ValueType
    cont: SessionType

    def _canonical(self, bound, memo):
        return (
            self.name,
            self.param._canonical(bound, memo),
            self.result._canonical(bound, memo),
            self.cont._canonical(bound, memo),
        )


@dataclass(frozen=True, eq=False, repr=False)
class Branch(SessionType):
    entries: tuple

    __slots__ = ("entries",)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def _canonical(self, bound, memo):
        ents = sorted(e._canonical(bound, memo) for e in self.entries)
        return ("branch", tuple(ents))

    def named(self, name):
        return tuple(e for e in self.entries if e.name == name)


EMPTY_BRANCH = Branch(())


@dataclass(frozen=True, eq=False, repr=False)
class VariantS(SessionType):
    cases: tuple  # ordered (label, SessionType) pairs, labels distinct

    __slots__ = ("cases",)

    def __post_init__(self):
        cases = tuple(self.cases)
        if not cases:
            raise ValueError("variant types have at least one case")
        labels = [l for l, _ in cases]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate variant label")
        object.__setattr__(self, "cases", cases)

    @property
    def labels(self):
        return frozenset(l for l, _ in self.cases)

    def case(self, label):
        for l, s in self.cases:
            if l == label:
                return s
        raise KeyError(label)

    def _canonical(self, bound, memo):
        cs = sorted((l, s._canonical(bound, memo)) for l, s in self.cases)
        return ("variant", tuple(cs))


@dataclass(frozen=True, eq=False, repr=False)
class RecS(SessionType):
    var: str
    body: SessionType

    __slots__ = ("var", "body")

    def _canonical(self, bound, memo):
        return ("rec", self.body._canonical(bound + (("s", self.var),), memo))


@dataclass(frozen=True, eq=False, repr=False)
class VarS(SessionType):
    name: str

    __slots__ = ("name",)

    def _canonical(self, bound, memo):
        for i in range(len(bound) - 1, -1, -1):
            if bound[i] == ("s", self.name):
                return ("var", len(bound) - 1 - i)
        return ("freevar", self.name)


# Channel session types ------------------------------------------------------


@dataclass(frozen=True, eq=False, repr=False)
class ChanEnd(ChannelType):
    __slots__ = ()

    def _canonical(self, bound, memo):
        return ("end",)


CHAN_END = ChanEnd()


@dataclass(frozen=True, eq=False, repr=False)
class ChanRecv(ChannelType):
    payload: Type  # ValueType or ChannelType
    cont: ChannelType

    __slots__ = ("payload", "cont")

    def _canonical(self, bound, memo):
        return ("recv", self.payload._canonical(bound, memo), self.cont._canonical(bound, memo))


@dataclass(frozen=True, eq=False, repr=False)
class ChanSend(ChannelType):
    payload: Type
    cont: ChannelType

    __slots__ = ("payload", "cont")

    def _canonical(self, bound, memo):
        return ("send", self.payload._canonical(bound, memo), self.cont._canonical(bound, memo))


@dataclass(frozen=True, eq=False, repr=False)
class ChanOffer(ChannelType):
    cases: tuple  # (label, ChannelType)

    __slots__ = ("cases",)

    def __post_init__(self):
        cases = tuple(self.cases)
        if not cases:
            raise ValueError("offer types have at least one label")
        object.__setattr__(self, "cases", cases)

    @property
    def labels(self):
        return frozenset(l for l, _ in self.cases)

    def case(self, label):
        for l, s in self.cases:
            if l == label:
                return s
        raise KeyError(label)

    def _canonical(self, bound, memo):
        cs = sorted((l, s._canonical(bound, memo)) for l, s in self.cases)
        return ("offer", tuple(cs))


@dataclass(frozen=True, eq=False, repr=False)
class ChanSelect(ChannelType):
    cases: tuple

    __slots__ = ("cases",)

    def __post_init__(self):
        cases = tuple(self.cases)
        if not cases:
            raise ValueError("select types have at least one label")
        object.__setattr__(self, "cases", cases)

    @property
    def labels(self):
        return frozenset(l for l, _ in self.cases)

    def case(self, label):
        for l, s in self.cases:
            if l == label:
                return s
        raise KeyError(label)

    def _canonical(self, bound, memo):
        cs = sorted((l, s._canonical(bound, memo)) for l, s in self.cases)
        return ("select", tuple(cs))


@dataclass(frozen=True, eq=False, repr=False)
class RecC(ChannelType):
    var: str
    body: ChannelType

    __slots__ = ("var", "body")

    def _canonical(self, bound, memo):
        return ("recc", self.body._canonical(bound + (("c", self.var),), memo))


@dataclass(frozen=True, eq=False, repr=False)
class VarC(ChannelType):
    name: str

    __slots__ = ("name",)

    def _canonical(self, bound, memo):
        for i in range(len(bound) - 1, -1, -1):
            if bound[i] == ("c", self.name):
                return ("var", len(bound) - 1 - i)
        return ("freevar", self.name)


@dataclass(frozen=True, eq=False, repr=False)
class AccessPointType(Type):
    """Type of a named access point carrying protocol Sigma."""

    protocol: ChannelType

    __slots__ = ("protocol",)

    def _canonical(self, bound, memo):
        return ("access", self.protocol._canonical(bound, memo))


# Field typings --------------------------------------------------------------


class FieldTyping(Type):
    __slots__ = ()


@dataclass(frozen=True, eq=False, repr=False)
class RecordF(FieldTyping):
    """Record field typing: one type per declared field, in declaration order."""

    items: tuple  # (field name, ValueType or ObjectInternal)

    __slots__ = ("items",)

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def get(self, f):
        for name, t in self.items:
            if name == f:
                return t
        raise KeyError(f)

    def has(self, f):
        return any(name == f for name, _ in self.items)

    def set(self, f, t):
        if not self.has(f):
            raise KeyError(f)
        return RecordF(tuple((n, t if n == f else old) for n, old in self.items))

    @property
    def fields(self):
        return tuple(n for n, _ in self.items)

    def _canonical(self, bound, memo):
        its = sorted((n, t._canonical(bound, memo)) for n, t in self.items)
        return ("record", tuple(its))


@dataclass(frozen=True, eq=False, repr=False)
class VariantF(FieldTyping):
    """Variant field typing: record per label. Nested variants are not allowed."""

    cases: tuple  # (label, RecordF)

    __slots__ = ("cases",)

    def __post_init__(self):
        cases = tuple(self.cases)
        if not cases:
            raise ValueError("variant field typings have at least one case")
        for _, f in cases:
            if isinstance(f, VariantF):
                raise ValueError("nested variant field typings are not permitted")
        object.__setattr__(self, "cases", cases)

    @property
    def labels(self):
        return frozenset(l for l, _ in self.cases)

    def case(self, label):
        for l, f in self.cases:
            if l == label:
                return f
        raise KeyError(label)

    def _canonical(self, bound, memo):
        cs = sorted((l, f._canonical(bound, memo)) for l, f in self.cases)
        return ("variantf", tuple(cs))


@dataclass(frozen=True, eq=False, repr=False)
class ObjectInternal(Type):
    """Internal object type C[F]: the view of an object from within its class."""

    cls: str
    typing: FieldTyping

    __slots__ = ("cls", "typing")

    def _canonical(self, bound, memo):
        return ("object", self.cls, self.typing._canonical(bound, memo))


def null_record(fields: Iterable[str]) -> RecordF:
    return RecordF(tuple((f, NULL_T) for f in fields))


# ---------------------------------------------------------------------------
# Unfolding and substitution
# ---------------------------------------------------------------------------


def _subst(t, var, repl, kind):
    """Substitute repl for the free variable `var` of the given kind in t.

    repl is closed, so no capture avoidance is needed beyond shadowing.
    Unchanged subterms are returned as-is, preserving sharing (unfolding
    then reuses existing nodes, which keeps traversals of recursive types
    finite when tracked by object identity).
    """
    if isinstance(t, VarS):
        return repl if (kind == "s" and t.name == var) else t
    if isinstance(t, VarC):
        return repl if (kind == "c" and t.name == var) else t
    if isinstance(t, RecS):
        if kind == "s" and t.var == var:
            return t
        body = _subst(t.body, var, repl, kind)
        return t if body is t.body else RecS(t.var, body)
    if isinstance(t, RecC):
        if kind == "c" and t.var == var:
            return t
        body = _subst(t.body, var, repl, kind)
        return t if body is t.body else RecC(t.var, body)
    if isinstance(t, Branch):
        entries = []
        changed = False
        for e in t.entries:
            p = _subst(e.param, var, repl, kind)
            r = _subst(e.result, var, repl, kind)
            c = _subst(e.cont, var, repl, kind)
            if p is e.param and r is e.result and c is e.cont:
                entries.append(e)
            else:
                changed = True
                entries.append(MethodSig(e.name, p, r, c))
        return Branch(tuple(entries)) if changed else t
    if isinstance(t, VariantS):
        cases = []
        changed = False
        for l, s in t.cases:
            s2 = _subst(s, var, repl, kind)
            changed = changed or s2 is not s
            cases.append((l, s2))
        return VariantS(tuple(cases)) if changed else t
    if isinstance(t, (ChanRecv, ChanSend)):
        p = _subst(t.payload, var, repl, kind)
        c = _subst(t.cont, var, repl, kind)
        if p is t.payload and c is t.cont:
            return t
        return type(t)(p, c)
    if isinstance(t, (ChanOffer, ChanSelect)):
        cases = []
        changed = False
        for l, s in t.cases:
            s2 = _subst(s, var, repl, kind)
            changed = changed or s2 is not s
            cases.append((l, s2))
        return type(t)(tuple(cases)) if changed else t
    return t


def subst_session(body: SessionType, var: str, repl: SessionType) -> SessionType:
    return _subst(body, var, repl, "s")


def subst_channel(body: ChannelType, var: str, repl: ChannelType) -> ChannelType:
    return _subst(body, var, repl, "c")


_UNFOLD_CACHE: dict = {}


def unfold(t):
    """Remove top-level rec binders by iterated substitution.

    Requires the input to be closed and contractive, which guarantees
    termination; the result is never a rec at the top.
    """
    key = id(t)
    cached = _UNFOLD_CACHE.get(key)
    if cached is not None and cached[0] is t:
        return cached[1]
    out = t
    while True:
        if isinstance(out, RecS):
            out = subst_session(out.body, out.var, out)
        elif isinstance(out, RecC):
            out = subst_channel(out.body, out.var, out)
        else:
            break
    if len(_UNFOLD_CACHE) > 100_000:
        _UNFOLD_CACHE.clear()
    _UNFOLD_CACHE[key] = (t, out)
    return out


def is_contractive(t) -> bool:
    """No chain rec X1...rec Xn.X1; checked through rec binders only."""

    def guard(u, seen):
        if isinstance(u, (RecS, RecC)):
            return guard(u.body, seen | {u.var})
        if isinstance(u, (VarS, VarC)):
            return u.name not in seen
        return True

    def walk(u):
        if isinstance(u, (RecS, RecC)):
            if not guard(u.body, {u.var}):
                return False
            return walk(u.body)
        if isinstance(u, Branch):
            return all(walk(e.param) and walk(e.result) and walk(e.cont) for e in u.entries)
        if isinstance(u, (VariantS, ChanOffer, ChanSelect)):
            return all(walk(s) for _, s in u.cases)
        if isinstance(u, (ChanRecv, ChanSend)):
            return walk(u.payload) and walk(u.cont)
        return True

    return walk(t)


def free_vars(t) -> set:
    out = set()

    def walk(u, bound):
        if isinstance(u, (VarS, VarC)):
            if u.name not in bound:
                out.add(u.name)
        elif isinstance(u, (RecS, RecC)):
            walk(u.body, bound | {u.var})
        elif isinstance(u, Branch):
            for e in u.entries:
                walk(e.param, bound)
                walk(e.result, bound)
                walk(e.cont, bound)
        elif isinstance(u, (VariantS, ChanOffer, ChanSelect)):
            for _, s in u.cases:
                walk(s, bound)
        elif isinstance(u, (ChanRecv, ChanSend)):
            walk(u.payload, bound)
            walk(u.cont, bound)

    walk(t, set())
    return out


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


class Expr:
    __slots__ = ()

    def __repr__(self):
        from .render import render_expr

        return render_expr(self)


@dataclass(frozen=True, repr=False)
class NullE(Expr):
    __slots__ = ()


NULL_E = NullE()


@dataclass(frozen=True, repr=False)
class LabelE(Expr):
    label: str
    __slots__ = ("label",)


@dataclass(frozen=True, repr=False)
class VarE(Expr):
    name: str
    __slots__ = ("name",)


@dataclass(frozen=True, repr=False)
class NewE(Expr):
    cls: str
    __slots__ = ("cls",)


@dataclass(frozen=True, repr=False)
class SwapE(Expr):
    field: str
    expr: Expr
    __slots__ = ("field", "expr")


@dataclass(frozen=True, repr=False)
class CallE(Expr):
    field: str
    method: str
    arg: Expr
    __slots__ = ("field", "method", "arg")


@dataclass(frozen=True, repr=False)
class SelfCallE(Expr):
    method: str
    arg: Expr
    __slots__ = ("method", "arg")


@dataclass(frozen=True, repr=False)
class SeqE(Expr):
    first: Expr
    second: Expr
    __slots__ = ("first", "second")


@dataclass(frozen=True, repr=False)
class SwitchE(Expr):
    subject: Expr
    cases: tuple  # (label, Expr)
    __slots__ = ("subject", "cases")

    def case(self, label):
        for l, e in self.cases:
            if l == label:
                return e
        raise KeyError(label)

    @property
    def labels(self):
        return frozenset(l for l, _ in self.cases)


@dataclass(frozen=True, repr=False)
class WhileE(Expr):
    cond: Expr
    body: Expr
    __slots__ = ("cond", "body")


@dataclass(frozen=True, repr=False)
class SpawnE(Expr):
    cls: str
    method: str
    arg: Expr
    __slots__ = ("cls", "method", "arg")


@dataclass(frozen=True, repr=False)
class ReturnE(Expr):
    """Internal: an ongoing method call whose body is being reduced."""

    expr: Expr
    __slots__ = ("expr",)


@dataclass(frozen=True, repr=False)
class ObjIdE(Expr):
    """Internal: a heap object identifier used as a value."""

    oid: str
    __slots__ = ("oid",)


@dataclass(frozen=True, repr=False)
class EndpointE(Expr):
    """Internal: channel endpoint c with polarity '+' or '-'."""

    chan: str
    polarity: str
    __slots__ = ("chan", "polarity")

    def dual_polarity(self):
        return "-" if self.polarity == "+" else "+"


@dataclass(frozen=True, repr=False)
class AccessE(Expr):
    """A global access point name used as a value."""

    name: str
    __slots__ = ("name",)


def is_value(e: Expr) -> bool:
    return isinstance(e, (NullE, LabelE, ObjIdE, EndpointE, AccessE))


def subst_expr(e: Expr, var: str, value: Expr) -> Expr:
    """Replace the method parameter `var` by a value throughout a body."""
    if isinstance(e, VarE):
        return value if e.name == var else e
    if isinstance(e, SwapE):
        return SwapE(e.field, subst_expr(e.expr, var, value))
    if isinstance(e, CallE):
        return CallE(e.field, e.method, subst_expr(e.arg, var, value))
    if isinstance(e, SelfCallE):
        return SelfCallE(e.method, subst_expr(e.arg, var, value))
    if isinstance(e, SeqE):
        return SeqE(subst_expr(e.first, var, value), subst_expr(e.second, var, value))
    if isinstance(e, SwitchE):
        return SwitchE(
            subst_expr(e.subject, var, value),
            tuple((l, subst_expr(b, var, value)) for l, b in e.cases),
        )
    if isinstance(e, WhileE):
        return WhileE(subst_expr(e.cond, var, value), subst_expr(e.body, var, value))
    if isinstance(e, SpawnE):
        return SpawnE(e.cls, e.method, subst_expr(e.arg, var, value))
    if isinstance(e, ReturnE):
        return ReturnE(subst_expr(e.expr, var, value))
    return e


# ---------------------------------------------------------------------------
# Declarations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodAnnotation:
    req: RecordF
    ens: RecordF
    result: ValueType
    param_type: ValueType


@dataclass(frozen=True)
class MethodDef:
    name: str
    param: str
    body: Expr
    annotation: Optional[MethodAnnotation] = None


@dataclass(frozen=True)
class ClassDecl:
    name: str
    session: SessionType
    fields: tuple
    methods: dict  # name -> MethodDef
    states: dict = field(default_factory=dict)  # declared state name -> SessionType

    def method(self, name) -> Optional[MethodDef]:
        return self.methods.get(name)

    def initial_field_typing(self) -> RecordF:
        return null_record(self.fields)


@dataclass(frozen=True)
class Program:
    classes: dict  # name -> ClassDecl
    access_points: dict = field(default_factory=dict)  # name -> ChannelType
    session_aliases: dict = field(default_factory=dict)  # name -> SessionType
    channel_aliases: dict = field(default_factory=dict)  # name -> ChannelType
    main: Optional[tuple] = None  # (class name, method name)

    def cls(self, name) -> ClassDecl:
        try:
            return self.classes[name]
        except KeyError:
            raise CoreError(f"undeclared class {name!r}") from None


# ---------------------------------------------------------------------------
# Heaps, paths, configurations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectRecord:
    cls: str
    fields: tuple  # (field name, value Expr) in declaration order

    def get(self, f) -> Expr:
        for name, v in self.fields:
            if name == f:
                return v
        raise NoSuchField(f)

    def has(self, f) -> bool:
        return any(name == f for name, _ in self.fields)

    def set(self, f, v) -> "ObjectRecord":
        if not self.has(f):
            raise NoSuchField(f)
        return ObjectRecord(self.cls, tuple((n, v if n == f else old) for n, old in self.fields))

    @property
    def field_names(self):
        return tuple(n for n, _ in self.fields)


@dataclass(frozen=True)
class Path:
    root: str
    fields: tuple = ()

    def child(self, f) -> "Path":
        return Path(self.root, self.fields + (f,))

    def parent(self) -> "Path":
        if not self.fields:
            raise CoreError("cannot pop the root of a path")
        return Path(self.root, self.fields[:-1])

    def last(self) -> str:
        if not self.fields:
            raise CoreError("path has no field component")
        return self.fields[-1]

    def starts_with(self, other: "Path") -> bool:
        return self.root == other.root and self.fields[: len(other.fields)] == other.fields

    def __str__(self):
        return ".".join((self.root,) + self.fields)


@dataclass(frozen=True)
class Heap:
    entries: tuple = ()  # (object id, ObjectRecord) in insertion order

    @staticmethod
    def of(mapping) -> "Heap":
        return Heap(tuple(mapping.items()) if isinstance(mapping, dict) else tuple(mapping))

    def record(self, oid) -> ObjectRecord:
        for o, r in self.entries:
            if o == oid:
                return r
        raise PathUndefined(f"no object {oid!r} in heap")

    def has(self, oid) -> bool:
        return any(o == oid for o, _ in self.entries)

    @property
    def ids(self):
        return tuple(o for o, _ in self.entries)

    def add(self, oid, rec: ObjectRecord) -> "Heap":
        if self.has(oid):
            raise HeapConflict(f"object {oid!r} already in heap")
        return Heap(self.entries + ((oid, rec),))

    def replace(self, oid, rec: ObjectRecord) -> "Heap":
        if not self.has(oid):
            raise PathUndefined(f"no object {oid!r} in heap")
        return Heap(tuple((o, rec if o == oid else r) for o, r in self.entries))

    # -- heap locations -----------------------------------------------------

    def resolve_id(self, r: Path) -> str:
        """Object id that path r denotes; every intermediate field must hold one."""
        oid = r.root
        if not self.has(oid):
            raise PathUndefined(f"no object {oid!r} in heap")
        for f in r.fields:
            v = self.record(oid).get(f)
            if not isinstance(v, ObjIdE):
                raise PathUndefined(f"{oid}.{f} does not hold an object identifier")
            oid = v.oid
            if not self.has(oid):
                raise PathUndefined(f"dangling object {oid!r}")
        return oid

    def resolve(self, r: Path) -> ObjectRecord:
        return self.record(self.resolve_id(r))

    def write(self, r: Path, f: str, v: Expr) -> "Heap":
        """h{r.f = v}: update exactly one field of the record at r."""
        oid = self.resolve_id(r)
        return self.replace(oid, self.record(oid).set(f, v))

    # -- children / roots / separation --------------------------------------

    def children(self, oid) -> tuple:
        return tuple(v.oid for _, v in self.record(oid).fields if isinstance(v, ObjIdE))

    def is_complete(self) -> bool:
        ids = set(self.ids)
        return all(set(self.children(o)) <= ids for o in self.ids)

    def roots(self) -> tuple:
        referenced = set()
        for o in self.ids:
            referenced.update(self.children(o))
        return tuple(o for o in self.ids if o not in referenced)

    def descendants(self, oid) -> tuple:
        """Breadth-first, first-visit order; requires a complete heap."""
        seen = [oid]
        seen_set = {oid}
        i = 0
        while i < len(seen):
            for c in self.children(seen[i]):
                if c not in seen_set:
                    seen_set.add(c)
                    seen.append(c)
            i += 1
        return tuple(seen)

    def split(self, oid) -> tuple:
        """(h down-restricted to desc(oid), h with desc(oid) removed)."""
        if not self.is_complete():
            raise IncompleteHeap("heap separation requires a complete heap")
        if oid not in self.roots():
            raise NotARoot(f"{oid!r} is not a root")
        desc = set(self.descendants(oid))
        down = Heap(tuple((o, r) for o, r in self.entries if o in desc))
        up = Heap(tuple((o, r) for o, r in self.entries if o not in desc))
        return down, up

    def merge(self, other: "Heap") -> "Heap":
        if set(self.ids) & set(other.ids):
            raise HeapConflict("heap domains overlap")
        return Heap(self.entries + other.entries)

    def rename(self, phi: dict) -> "Heap":
        """Apply an object-id renaming everywhere, including inside records."""
        img = [phi[o] for o in self.ids if o in phi]
        if len(set(img)) != len(img):
            raise NotInjective("renaming is not injective on the heap domain")

        def ren_val(v):
            if isinstance(v, ObjIdE) and v.oid in phi:
                return ObjIdE(phi[v.oid])
            return v

        return Heap(
            tuple(
                (
                    phi.get(o, o),
                    ObjectRecord(r.cls, tuple((f, ren_val(v)) for f, v in r.fields)),
                )
                for o, r in self.entries
            )
        )


@dataclass(frozen=True)
class Thread:
    heap: Heap
    path: Path
    expr: Expr


@dataclass(frozen=True)
class Configuration:
    threads: tuple
    bound_channels: frozenset = frozenset()
    next_obj: int = 0
    next_chan: int = 0

    def fresh_obj(self):
        return f"o{self.next_obj}", replace(self, next_obj=self.next_obj + 1)

    def fresh_chan(self):
        return f"c{self.next_chan}", replace(self, next_chan=self.next_chan + 1)

    def with_thread(self, i, thread: Thread) -> "Configuration":
        ts = list(self.threads)
        ts[i] = thread
        return replace(self, threads=tuple(ts))


def endpoints_of(e: Expr) -> set:
    """Channel endpoints occurring in an expression."""
    out = set()

    def walk(x):
        if isinstance(x, EndpointE):
            out.add((x.chan, x.polarity))
        elif isinstance(x, (SwapE, ReturnE)):
            walk(x.expr)
        elif isinstance(x, CallE):
            walk(x.arg)
        elif isinstance(x, SelfCallE):
            walk(x.arg)
        elif isinstance(x, SpawnE):
            walk(x.arg)
        elif isinstance(x, SeqE):
            walk(x.first)
            walk(x.second)
        elif isinstance(x, SwitchE):
            walk(x.subject)
            for _, b in x.cases:
                walk(b)
        elif isinstance(x, WhileE):
            walk(x.cond)
            walk(x.body)

    walk(e)
    return out


def heap_endpoints(h: Heap) -> set:
    out = set()
    for _, rec in h.entries:
        for _, v in rec.fields:
            if isinstance(v, EndpointE):
                out.add((v.chan, v.polarity))
    return out
