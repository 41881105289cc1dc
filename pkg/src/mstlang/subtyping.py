"""Coinductive subtyping on session types, value types and field typings,
plus the join operator used when merging variant branches.

The sub-session check follows the standard assumption-set construction for
coinductively defined relations: a pair is assumed before its components are
checked, so cycles through rec types terminate. Assumption keys are the
canonical forms of both sides, which are alpha-normalized, making membership
sound for recursive types.
"""

from __future__ import annotations

from . import syntax as sx
from .syntax import (
    Branch,
    EnumType,
    LinkField,
    LinkThis,
    MethodSig,
    ObjectInternal,
    RecordF,
    SessionType,
    ValueType,
    VariantF,
    VariantS,
    unfold,
)


class JoinUndefined(Exception):
    pass


# ---------------------------------------------------------------------------
# Sub-session
# ---------------------------------------------------------------------------


_SUB_CACHE: dict = {}


def subtype_session(s: SessionType, t: SessionType, assumptions=None) -> bool:
    """Largest sub-session relation: branches contravariant in the method set
    and signature-compatible pointwise; variants covariant in the label set.

    `assumptions` holds the pairs on the current proof path (coinduction);
    it is extended per path, never shared across siblings, so a failed branch
    cannot leak unproven assumptions into another one.
    """
    key = (s.canon(), t.canon())
    if key[0] == key[1]:
        return True
    cached = _SUB_CACHE.get(key)
    if cached is not None:
        return cached
    if assumptions is None:
        result = _subtype_session(s, t, frozenset(), key)
        if len(_SUB_CACHE) > 50_000:
            _SUB_CACHE.clear()
        _SUB_CACHE[key] = result
        return result
    return _subtype_session(s, t, assumptions, key)


def _subtype_session(s, t, assumptions, key=None):
    if key is None:
        key = (s.canon(), t.canon())
        if key[0] == key[1]:
            return True
        cached = _SUB_CACHE.get(key)
        if cached is not None:
            return cached
    if key in assumptions:
        return True
    assumptions = assumptions | {key}
    su, tu = unfold(s), unfold(t)
    if isinstance(su, Branch) and isinstance(tu, Branch):
        for sig_t in tu.entries:
            sig_s = _match_entry(su, sig_t)
            if sig_s is None:
                return False
            if not _compatible_signature(sig_s, sig_t, assumptions):
                return False
        return True
    if isinstance(su, VariantS) and isinstance(tu, VariantS):
        if not su.labels <= tu.labels:
            return False
        return all(_subtype_session(c, tu.case(l), assumptions) for l, c in su.cases)
    return False


def _match_entry(branch: Branch, sig_t: MethodSig):
    """Entry of the subtype branch that serves an entry of the supertype.

    Overloads are disambiguated by parameter type: among the entries named m
    whose parameter is a supertype of the requested parameter (parameters are
    contravariant), the one with the least parameter wins; ambiguity means no
    match.
    """
    named = branch.named(sig_t.name)
    if len(named) == 1:
        return named[0]
    candidates = [e for e in named if subtype_value(sig_t.param, e.param)]
    if not candidates:
        return None
    least = []
    for e in candidates:
        if all(subtype_value(e.param, other.param) for other in candidates):
            least.append(e)
    if len(least) == 1:
        return least[0]
    return None


def _compatible_signature(sig: MethodSig, sig_t: MethodSig, assumptions) -> bool:
    # contravariant parameter
    if not _compatible_value(sig_t.param, sig.param, assumptions):
        return False
    # covariant result and continuation
    if _compatible_value(sig.result, sig_t.result, assumptions) and _subtype_session(
        sig.cont, sig_t.cont, assumptions
    ):
        return True
    # an enum-returning method may be used at linkthis with the uniform variant
    if isinstance(sig.result, EnumType) and isinstance(sig_t.result, LinkThis):
        uniform = VariantS(tuple((l, sig.cont) for l in sorted(sig.result.labels)))
        return _subtype_session(uniform, sig_t.cont, assumptions)
    return False


def _compatible_value(t, t_sup, assumptions) -> bool:
    if t.canon() == t_sup.canon():
        return True
    if isinstance(t, EnumType) and isinstance(t_sup, EnumType):
        return t.labels <= t_sup.labels
    if isinstance(t, SessionType) and isinstance(t_sup, SessionType):
        return _subtype_session(t, t_sup, assumptions)
    return False


def subtype_value(t: ValueType, t_sup: ValueType) -> bool:
    """Compatibility on value types: equality, enum inclusion, or sub-session."""
    if isinstance(t, SessionType) and isinstance(t_sup, SessionType):
        return subtype_session(t, t_sup)
    return _compatible_value(t, t_sup, frozenset())


def subtype_field(f, f_sup) -> bool:
    """Subtyping on field typings and internal object types."""
    if isinstance(f, RecordF) and isinstance(f_sup, RecordF):
        if set(f.fields) != set(f_sup.fields):
            return False
        return all(subtype_any(t, f_sup.get(name)) for name, t in f.items)
    if isinstance(f, VariantF) and isinstance(f_sup, VariantF):
        if not f.labels <= f_sup.labels:
            return False
        return all(subtype_field(r, f_sup.case(l)) for l, r in f.cases)
    if isinstance(f, ObjectInternal) and isinstance(f_sup, ObjectInternal):
        return f.cls == f_sup.cls and subtype_field(f.typing, f_sup.typing)
    return False


def subtype_any(t, t_sup) -> bool:
    """Dispatch between value types, field typings and internal object types."""
    if isinstance(t, (RecordF, VariantF, ObjectInternal)) or isinstance(
        t_sup, (RecordF, VariantF, ObjectInternal)
    ):
        return subtype_field(t, t_sup)
    return subtype_value(t, t_sup)


def equivalent(x, y) -> bool:
    """Same infinite unfoldings: subtype both ways."""
    if isinstance(x, SessionType) and isinstance(y, SessionType):
        return subtype_session(x, y) and subtype_session(y, x)
    return subtype_any(x, y) and subtype_any(y, x)


# ---------------------------------------------------------------------------
# Joins (least upper bounds)
# ---------------------------------------------------------------------------


def join_value(t, u):
    if t.canon() == u.canon():
        return t
    if isinstance(t, EnumType) and isinstance(u, EnumType):
        return EnumType(t.labels | u.labels)
    if isinstance(t, SessionType) and isinstance(u, SessionType):
        return join_session(t, u)
    raise JoinUndefined(f"no join of {t!r} and {u!r}")


def meet_value(t, u):
    """Greatest lower bound of parameter types; only enums meet non-trivially."""
    if t.canon() == u.canon():
        return t
    if isinstance(t, EnumType) and isinstance(u, EnumType):
        inter = t.labels & u.labels
        if not inter:
            raise JoinUndefined("empty enumeration meet")
        return EnumType(inter)
    raise JoinUndefined(f"no meet of {t!r} and {u!r}")


def join_session(s: SessionType, t: SessionType, _memo=None) -> SessionType:
    """Join of session types: method-set intersection for branches with
    parameter meets and result/continuation joins; label union for variants."""
    if _memo is None:
        _memo = {}
    key = (s.canon(), t.canon())
    if key in _memo:
        name, state = _memo[key]
        state["used"] = True
        return sx.VarS(name)
    name = f"_J{len(_memo)}"
    state = {"used": False}
    _memo[key] = (name, state)
    su, tu = unfold(s), unfold(t)
    if isinstance(su, Branch) and isinstance(tu, Branch):
        entries = []
        for e in su.entries:
            for e2 in tu.entries:
                if e.name != e2.name:
                    continue
                try:
                    param = meet_value(e.param, e2.param)
                except JoinUndefined:
                    continue
                entries.append(_join_entry(e, e2, param, _memo))
        body = Branch(tuple(entries))
    elif isinstance(su, VariantS) and isinstance(tu, VariantS):
        cases = []
        for l, c in su.cases:
            if l in tu.labels:
                cases.append((l, join_session(c, tu.case(l), _memo)))
            else:
                cases.append((l, c))
        for l, c in tu.cases:
            if l not in su.labels:
                cases.append((l, c))
        body = VariantS(tuple(cases))
    else:
        raise JoinUndefined(f"no join of {s!r} and {t!r}")
    del _memo[key]
    if state["used"]:
        return sx.RecS(name, body)
    return body


def _join_entry(e, e2, param, memo):
    r1, r2 = e.result, e2.result
    if isinstance(r1, LinkThis) or isinstance(r2, LinkThis):
        # lift an enum-returning side to the uniform variant form
        def lift(sig):
            if isinstance(sig.result, LinkThis):
                return sig.cont
            if isinstance(sig.result, EnumType):
                return VariantS(tuple((l, sig.cont) for l in sorted(sig.result.labels)))
            raise JoinUndefined("cannot join linkthis with a non-enumeration result")

        cont = join_session(lift(e), lift(e2), memo)
        return MethodSig(e.name, param, sx.LINK_THIS, cont)
    result = join_value(r1, r2)
    cont = join_session(e.cont, e2.cont, memo)
    return MethodSig(e.name, param, result, cont)


def join_field(f, g):
    """Join of field typings: pointwise on records over the same fields;
    label union on variants with joins on the intersection."""
    if isinstance(f, RecordF) and isinstance(g, RecordF):
        if f.fields != g.fields and set(f.fields) != set(g.fields):
            raise JoinUndefined("records over different field sets")
        return RecordF(tuple((name, join_any(t, g.get(name))) for name, t in f.items))
    if isinstance(f, VariantF) and isinstance(g, VariantF):
        cases = []
        for l, r in f.cases:
            if l in g.labels:
                cases.append((l, join_field(r, g.case(l))))
            else:
                cases.append((l, r))
        for l, r in g.cases:
            if l not in f.labels:
                cases.append((l, r))
        return VariantF(tuple(cases))
    raise JoinUndefined(f"no join of {f!r} and {g!r}")


def join_any(t, u):
    if isinstance(t, (RecordF, VariantF)) and isinstance(u, (RecordF, VariantF)):
        return join_field(t, u)
    if isinstance(t, LinkField) and isinstance(u, LinkField) and t.field == u.field:
        return t
    return join_value(t, u)


def join_records(records):
    out = None
    for r in records:
        out = r if out is None else join_field(out, r)
    if out is None:
        raise JoinUndefined("empty join")
    return out
