"""Duality of channel session types and their translation into class session
types, so that channel endpoints and access points can be used as objects
with send/receive/request/accept methods."""

from __future__ import annotations

from . import syntax as sx
from .syntax import (
    ChanEnd,
    ChanOffer,
    ChanRecv,
    ChanSelect,
    ChanSend,
    ChannelType,
    EnumType,
    RecC,
    RecS,
    SessionType,
    VarC,
    VarS,
    unfold,
)


_DUAL_CACHE: dict = {}


def dual(sigma: ChannelType) -> ChannelType:
    """The other endpoint's view: send/receive and offer/select exchanged,
    payloads unchanged. An involution."""
    key = sigma.canon()
    hit = _DUAL_CACHE.get(key)
    if hit is not None:
        return hit
    out = _dual(sigma)
    if len(_DUAL_CACHE) > 20_000:
        _DUAL_CACHE.clear()
    _DUAL_CACHE[key] = out
    return out


def _dual(sigma: ChannelType) -> ChannelType:
    if isinstance(sigma, ChanEnd):
        return sigma
    if isinstance(sigma, VarC):
        return sigma
    if isinstance(sigma, RecC):
        return RecC(sigma.var, dual(sigma.body))
    if isinstance(sigma, ChanSend):
        return ChanRecv(sigma.payload, dual(sigma.cont))
    if isinstance(sigma, ChanRecv):
        return ChanSend(sigma.payload, dual(sigma.cont))
    if isinstance(sigma, ChanSelect):
        return ChanOffer(tuple((l, dual(c)) for l, c in sigma.cases))
    if isinstance(sigma, ChanOffer):
        return ChanSelect(tuple((l, dual(c)) for l, c in sigma.cases))
    raise TypeError(f"not a channel type: {sigma!r}")


def translate_payload(t):
    """Payload types of sends/receives, with channel payloads translated so
    the resulting signature is a pure class type (delegation)."""
    if isinstance(t, ChannelType):
        return translate_channel(t)
    return t


_TRANSLATE_CACHE: dict = {}


def translate_channel(sigma: ChannelType) -> SessionType:
    """Class session type of an endpoint of type sigma.

    end is the empty branch; ?T.S becomes a receive returning T; !T.S a send
    taking T; an offer is a receive whose result selects a variant; a select
    is a family of send overloads, one singleton parameter type per label.
    Results are memoized so equal channel types share one translation.
    """
    key = sigma.canon()
    hit = _TRANSLATE_CACHE.get(key)
    if hit is not None:
        return hit
    out = _translate_channel(sigma)
    if len(_TRANSLATE_CACHE) > 20_000:
        _TRANSLATE_CACHE.clear()
    _TRANSLATE_CACHE[key] = out
    return out


def _translate_channel(sigma: ChannelType) -> SessionType:
    if isinstance(sigma, ChanEnd):
        return sx.EMPTY_BRANCH
    if isinstance(sigma, VarC):
        return VarS(sigma.name)
    if isinstance(sigma, RecC):
        return RecS(sigma.var, translate_channel(sigma.body))
    if isinstance(sigma, ChanRecv):
        return sx.Branch(
            (sx.MethodSig("receive", sx.NULL_T, translate_payload(sigma.payload),
                          translate_channel(sigma.cont)),)
        )
    if isinstance(sigma, ChanSend):
        return sx.Branch(
            (sx.MethodSig("send", translate_payload(sigma.payload), sx.NULL_T,
                          translate_channel(sigma.cont)),)
        )
    if isinstance(sigma, ChanOffer):
        variant = sx.VariantS(tuple((l, translate_channel(c)) for l, c in sigma.cases))
        return sx.Branch((sx.MethodSig("receive", sx.NULL_T, sx.LINK_THIS, variant),))
    if isinstance(sigma, ChanSelect):
        return sx.Branch(
            tuple(
                sx.MethodSig("send", EnumType(frozenset({l})), sx.NULL_T, translate_channel(c))
                for l, c in sigma.cases
            )
        )
    raise TypeError(f"not a channel type: {sigma!r}")


def translate_access(sigma: ChannelType) -> SessionType:
    """Class session type of an access point: request and accept are always
    available; request yields the dual endpoint, accept the declared one."""
    var = "_AP"
    return RecS(
        var,
        sx.Branch(
            (
                sx.MethodSig("request", sx.NULL_T, translate_channel(dual(sigma)), VarS(var)),
                sx.MethodSig("accept", sx.NULL_T, translate_channel(sigma), VarS(var)),
            )
        ),
    )


# ---------------------------------------------------------------------------
# Direct channel subtyping (oracle only)
# ---------------------------------------------------------------------------


_SUBC_CACHE: dict = {}


def subtype_channel(a: ChannelType, b: ChannelType, _assumptions=None) -> bool:
    """Direct sub-channel relation used as an oracle for checking that the
    translation above is monotone. Receive payloads are covariant, send
    payloads contravariant; offers are covariant and selects contravariant
    in their label sets."""
    key = (a.canon(), b.canon())
    if key[0] == key[1]:
        return True
    if _assumptions is None:
        hit = _SUBC_CACHE.get(key)
        if hit is None:
            hit = _subtype_channel(a, b, frozenset(), key)
            if len(_SUBC_CACHE) > 50_000:
                _SUBC_CACHE.clear()
            _SUBC_CACHE[key] = hit
        return hit
    return _subtype_channel(a, b, _assumptions, key)


def _subtype_channel(a, b, _assumptions, key=None):
    if key is None:
        key = (a.canon(), b.canon())
        if key[0] == key[1]:
            return True
    if key in _assumptions:
        return True
    assumptions = _assumptions | {key}
    au, bu = unfold(a), unfold(b)
    if isinstance(au, ChanEnd) and isinstance(bu, ChanEnd):
        return True
    if isinstance(au, ChanRecv) and isinstance(bu, ChanRecv):
        return _payload_sub(au.payload, bu.payload, assumptions) and _subtype_channel(
            au.cont, bu.cont, assumptions
        )
    if isinstance(au, ChanSend) and isinstance(bu, ChanSend):
        return _payload_sub(bu.payload, au.payload, assumptions) and _subtype_channel(
            au.cont, bu.cont, assumptions
        )
    if isinstance(au, ChanOffer) and isinstance(bu, ChanOffer):
        if not au.labels <= bu.labels:
            return False
        return all(_subtype_channel(c, bu.case(l), assumptions) for l, c in au.cases)
    if isinstance(au, ChanSelect) and isinstance(bu, ChanSelect):
        if not bu.labels <= au.labels:
            return False
        return all(_subtype_channel(au.case(l), c, assumptions) for l, c in bu.cases)
    return False


def _payload_sub(p, q, assumptions):
    from .subtyping import subtype_value

    if isinstance(p, ChannelType) and isinstance(q, ChannelType):
        return _subtype_channel(p, q, assumptions)
    if isinstance(p, ChannelType) or isinstance(q, ChannelType):
        return False
    return subtype_value(p, q)
