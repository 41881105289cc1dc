"""Parser for the surface language (.mst files).

One file holds class declarations, access point declarations, standalone
type aliases and an optional main designation. Session types are written in
the signature-carrying style; ``where`` clauses introduce named states that
are folded into rec types (a name becomes the binder at its first expansion,
back references become variables).

Sugar applied while parsing:
  f = e        =>  (f <-> e); null
  f            =>  f <-> null            (bare field read in expression position)
  f.m()        =>  f.m(null)             (missing argument)
  m(e), m()    =>  self-call
  enum result on a signature whose continuation is a variant  =>  linkthis
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import syntax as sx


class ParseError(Exception):
    def __init__(self, msg, line=None, col=None):
        if line is not None:
            msg = f"{line}:{col}: {msg}"
        super().__init__(msg)
        self.line = line
        self.col = col


class UnboundStateName(ParseError):
    pass


class NonContractiveType(ParseError):
    pass


class DuplicateClass(ParseError):
    pass


KEYWORDS = {
    "class", "session", "where", "rec", "req", "ens", "new", "spawn",
    "switch", "case", "while", "null", "linkthis", "Null", "End",
    "access", "type", "chantype",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<op><->|[{}<>(),;:.=?!&+])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # 'op', 'ident', 'kw', 'eof'
    text: str
    line: int
    col: int


def tokenize(text: str):
    toks = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        value = m.group(0)
        if m.lastgroup == "op":
            toks.append(Token("op", value, line, col))
        elif m.lastgroup == "ident":
            kind = "kw" if value in KEYWORDS else "ident"
            toks.append(Token(kind, value, line, col))
        nl = value.count("\n")
        if nl:
            line += nl
            col = len(value) - value.rfind("\n")
        else:
            col += len(value)
        pos = m.end()
    toks.append(Token("eof", "", line, col))
    return toks


def _is_upper(name):
    return name[0].isupper()


# Raw (unresolved) type trees: plain tuples, resolved in a second pass once
# all aliases in the file are known.


class _P:
    def __init__(self, tokens):
        self.toks = tokens
        self.i = 0

    def peek(self, ahead=0):
        return self.toks[min(self.i + ahead, len(self.toks) - 1)]

    def next(self):
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def at(self, text, ahead=0):
        t = self.peek(ahead)
        return t.text == text and t.kind in ("op", "kw")

    def expect(self, text):
        t = self.next()
        if t.text != text or t.kind not in ("op", "kw"):
            raise ParseError(f"expected {text!r}, found {t.text!r}", t.line, t.col)
        return t

    def ident(self, what="identifier"):
        t = self.next()
        if t.kind != "ident":
            raise ParseError(f"expected {what}, found {t.text!r}", t.line, t.col)
        return t.text

    def uident(self, what="name"):
        t = self.peek()
        name = self.ident(what)
        if not _is_upper(name):
            raise ParseError(f"{what} must start uppercase, found {name!r}", t.line, t.col)
        return name

    def lident(self, what="name"):
        t = self.peek()
        name = self.ident(what)
        if _is_upper(name):
            raise ParseError(f"{what} must start lowercase, found {name!r}", t.line, t.col)
        return name

    # -- types (raw) ---------------------------------------------------------

    def raw_session(self):
        t = self.peek()
        if self.at("{"):
            return self.raw_braced(session_only=True)
        if self.at("<"):
            return self.raw_variant_or_access()
        if self.at("rec"):
            self.next()
            var = self.uident("type variable")
            self.expect(".")
            return ("rec", var, self.raw_session())
        if t.kind == "ident" and _is_upper(t.text):
            self.next()
            return ("name", t.text)
        raise ParseError(f"expected a session type, found {t.text!r}", t.line, t.col)

    def raw_braced(self, session_only=False):
        """Parse a '{...}' which is an enum, or a branch session type."""
        self.expect("{")
        if self.at("}"):
            self.next()
            return ("branch", ())
        # enum: uppercase idents separated by commas, then '}'
        t = self.peek()
        if (
            not session_only
            and t.kind == "ident"
            and _is_upper(t.text)
            and self.peek(1).text in (",", "}")
        ):
            labels = [self.uident("label")]
            while self.at(","):
                self.next()
                labels.append(self.uident("label"))
            self.expect("}")
            return ("enum", tuple(labels))
        sigs = [self.raw_signature()]
        while self.at(","):
            self.next()
            sigs.append(self.raw_signature())
        self.expect("}")
        return ("branch", tuple(sigs))

    def raw_signature(self):
        result = self.raw_vtype()
        name = self.lident("method name")
        self.expect("(")
        if self.at(")"):
            param = ("null",)
        else:
            param = self.raw_vtype()
            # the parameter may carry a name in annotated headers; ignore it
            if self.peek().kind == "ident" and not _is_upper(self.peek().text):
                self.next()
        self.expect(")")
        self.expect(":")
        cont = self.raw_session()
        return (result, name, param, cont)

    def raw_vtype(self):
        t = self.peek()
        if self.at("Null"):
            self.next()
            return ("null",)
        if self.at("linkthis"):
            self.next()
            return ("linkthis",)
        if self.at("{"):
            return self.raw_braced()
        if self.at("<"):
            return self.raw_variant_or_access()
        if self.at("rec"):
            return self.raw_session()
        if t.kind == "ident" and _is_upper(t.text):
            self.next()
            return ("name", t.text)
        raise ParseError(f"expected a type, found {t.text!r}", t.line, t.col)

    def raw_variant_or_access(self):
        self.expect("<")
        t = self.peek()
        if t.kind == "ident" and _is_upper(t.text) and self.at(":", 1):
            cases = []
            while True:
                label = self.uident("variant label")
                self.expect(":")
                cases.append((label, self.raw_session()))
                if self.at(","):
                    self.next()
                    continue
                break
            self.expect(">")
            return ("variant", tuple(cases))
        proto = self.raw_channel()
        self.expect(">")
        return ("access", proto)

    def raw_channel(self):
        t = self.peek()
        if self.at("End"):
            self.next()
            return ("end",)
        if self.at("?") or self.at("!"):
            op = self.next().text
            payload = self.raw_payload()
            self.expect(".")
            cont = self.raw_channel()
            return ("recv" if op == "?" else "send", payload, cont)
        if self.at("&") or self.at("+"):
            op = self.next().text
            self.expect("{")
            cases = []
            while True:
                label = self.uident("label")
                self.expect(":")
                cases.append((label, self.raw_channel()))
                if self.at(","):
                    self.next()
                    continue
                break
            self.expect("}")
            return ("offer" if op == "&" else "select", tuple(cases))
        if self.at("rec"):
            self.next()
            var = self.uident("type variable")
            self.expect(".")
            return ("recc", var, self.raw_channel())
        if self.at("("):
            self.next()
            inner = self.raw_channel()
            self.expect(")")
            return inner
        if t.kind == "ident" and _is_upper(t.text):
            self.next()
            return ("cname", t.text)
        raise ParseError(f"expected a channel type, found {t.text!r}", t.line, t.col)

    def raw_payload(self):
        t = self.peek()
        if t.text in ("?", "!", "&", "+", "End", "("):
            return self.raw_channel()
        if t.kind == "ident" and _is_upper(t.text):
            self.next()
            return ("pname", t.text)  # channel alias or session name, decided later
        return self.raw_vtype()

    # -- expressions ---------------------------------------------------------

    def stmts(self, stop=("}",)):
        parts = [self.stmt()]
        while True:
            if self.at(";"):
                self.next()
            elif not isinstance(parts[-1], (sx.SwitchE, sx.WhileE)):
                break
            t = self.peek()
            if t.kind == "eof" or t.text in stop:
                break
            if t.kind == "ident" and _is_upper(t.text) and self.at(":", 1):
                break  # next switch case
            if self.at("case"):
                break
            parts.append(self.stmt())
        expr = parts[-1]
        for p in reversed(parts[:-1]):
            expr = sx.SeqE(p, expr)
        return expr

    def stmt(self):
        if self.at("while"):
            self.next()
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            if self.at("{"):
                self.next()
                body = self.stmts()
                self.expect("}")
            else:
                body = self.stmt()
            return sx.WhileE(cond, body)
        t = self.peek()
        if t.kind == "ident" and not _is_upper(t.text) and self.at("=", 1):
            f = self.lident("field name")
            self.next()  # '='
            return sx.SeqE(sx.SwapE(f, self.expr()), sx.NULL_E)
        return self.expr()

    def expr(self):
        t = self.peek()
        if self.at("null"):
            self.next()
            return sx.NULL_E
        if self.at("new"):
            self.next()
            cls = self.uident("class name")
            self.expect("(")
            self.expect(")")
            return sx.NewE(cls)
        if self.at("spawn"):
            self.next()
            cls = self.uident("class name")
            self.expect(".")
            m = self.lident("method name")
            self.expect("(")
            arg = sx.NULL_E if self.at(")") else self.expr()
            self.expect(")")
            return sx.SpawnE(cls, m, arg)
        if self.at("switch"):
            self.next()
            self.expect("(")
            subject = self.expr()
            self.expect(")")
            self.expect("{")
            cases = []
            while not self.at("}"):
                if self.at("case"):
                    self.next()
                label = self.uident("case label")
                self.expect(":")
                cases.append((label, self.stmts()))
            self.expect("}")
            if not cases:
                raise ParseError("switch needs at least one case", t.line, t.col)
            return sx.SwitchE(subject, tuple(cases))
        if t.kind == "ident" and _is_upper(t.text):
            self.next()
            return sx.LabelE(t.text)
        if t.kind == "ident":
            name = self.lident()
            if self.at("<->"):
                self.next()
                return sx.SwapE(name, self.expr())
            if self.at("."):
                self.next()
                m = self.lident("method name")
                self.expect("(")
                arg = sx.NULL_E if self.at(")") else self.expr()
                self.expect(")")
                return sx.CallE(name, m, arg)
            if self.at("("):
                self.next()
                arg = sx.NULL_E if self.at(")") else self.expr()
                self.expect(")")
                return sx.SelfCallE(name, arg)
            return sx.VarE(name)  # param, bare field read, or access name
        raise ParseError(f"expected an expression, found {t.text!r}", t.line, t.col)


# ---------------------------------------------------------------------------
# Name resolution / mu-folding
# ---------------------------------------------------------------------------


class _Resolver:
    """Turns raw type trees into closed types, folding named states to recs."""

    def __init__(self, session_defs, channel_defs):
        self.session_defs = session_defs  # name -> raw
        self.channel_defs = channel_defs

    def session(self, raw, stack=(), bound=frozenset()):
        tag = raw[0]
        if tag == "branch":
            entries = []
            for result, name, param, cont in raw[1]:
                entries.append(
                    (result, name, param, self.session(cont, stack, bound))
                )
            sigs = []
            for result, name, param, cont in entries:
                r = self.vtype(result, stack, bound)
                p = self.vtype(param, stack, bound)
                # surface enum result + variant continuation means linkthis
                if isinstance(r, sx.EnumType) and self._variant_like(cont):
                    r = sx.LINK_THIS
                sigs.append(sx.MethodSig(name, p, r, cont))
            return sx.Branch(tuple(sigs))
        if tag == "variant":
            return sx.VariantS(tuple((l, self.session(s, stack, bound)) for l, s in raw[1]))
        if tag == "rec":
            return sx.RecS(raw[1], self.session(raw[2], stack, bound | {raw[1]}))
        if tag == "name":
            name = raw[1]
            if name in bound:
                return sx.VarS(name)
            if name in stack:
                return sx.VarS(name)
            if name not in self.session_defs:
                raise UnboundStateName(f"unknown session type name {name!r}")
            body = self.session(self.session_defs[name], stack + (name,), bound)
            if name in sx.free_vars(body):
                return sx.RecS(name, body)
            return body
        raise ParseError(f"not a session type: {tag}")

    def _variant_like(self, s):
        while isinstance(s, sx.RecS):
            s = s.body
        return isinstance(s, sx.VariantS)

    def vtype(self, raw, stack=(), bound=frozenset()):
        tag = raw[0]
        if tag == "null":
            return sx.NULL_T
        if tag == "enum":
            return sx.EnumType(frozenset(raw[1]))
        if tag == "linkthis":
            return sx.LINK_THIS
        if tag == "access":
            from .channels import translate_access

            return translate_access(self.channel(raw[1], (), frozenset()))
        return self.session(raw, stack, bound)

    def channel(self, raw, stack=(), bound=frozenset()):
        tag = raw[0]
        if tag == "end":
            return sx.CHAN_END
        if tag in ("recv", "send"):
            payload = self.payload(raw[1], stack, bound)
            cont = self.channel(raw[2], stack, bound)
            return sx.ChanRecv(payload, cont) if tag == "recv" else sx.ChanSend(payload, cont)
        if tag in ("offer", "select"):
            cases = tuple((l, self.channel(s, stack, bound)) for l, s in raw[1])
            return sx.ChanOffer(cases) if tag == "offer" else sx.ChanSelect(cases)
        if tag == "recc":
            return sx.RecC(raw[1], self.channel(raw[2], stack, bound | {raw[1]}))
        if tag == "cname":
            name = raw[1]
            if name in bound or name in stack:
                return sx.VarC(name)
            if name not in self.channel_defs:
                raise UnboundStateName(f"unknown channel type name {name!r}")
            body = self.channel(self.channel_defs[name], stack + (name,), bound)
            if name in sx.free_vars(body):
                return sx.RecC(name, body)
            return body
        raise ParseError(f"not a channel type: {tag}")

    def payload(self, raw, stack, bound):
        if raw[0] == "pname":
            name = raw[1]
            if name in self.channel_defs or name in bound or name in stack:
                return self.channel(("cname", name), stack, bound)
            return self.session(("name", name))
        if raw[0] in ("end", "recv", "send", "offer", "select", "recc"):
            return self.channel(raw, stack, bound)
        return self.vtype(raw)


def _check_session_wf(s, what):
    if sx.free_vars(s):
        raise UnboundStateName(f"{what}: unbound type variable {sorted(sx.free_vars(s))[0]!r}")
    if not sx.is_contractive(s):
        raise NonContractiveType(f"{what}: type is not contractive")
    _check_variant_components(s, what, set())


def _check_variant_components(s, what, seen):
    key = s.canon()
    if key in seen:
        return
    seen.add(key)
    u = sx.unfold(s)
    if isinstance(u, sx.VariantS):
        for l, case in u.cases:
            cu = sx.unfold(case)
            if not isinstance(cu, sx.Branch):
                raise ParseError(f"{what}: variant case {l!r} is not a branch type")
    if isinstance(u, sx.Branch):
        for e in u.entries:
            _check_variant_components(e.cont, what, seen)
            if isinstance(e.param, sx.SessionType):
                _check_variant_components(e.param, what, seen)
            if isinstance(e.result, sx.SessionType):
                _check_variant_components(e.result, what, seen)
    elif isinstance(u, sx.VariantS):
        for _, case in u.cases:
            _check_variant_components(case, what, seen)


# ---------------------------------------------------------------------------
# Program parsing
# ---------------------------------------------------------------------------


@dataclass
class _RawClass:
    name: str
    session: tuple
    states: dict
    fields: list
    methods: list  # (annot raw or None, name, param name, body, token)


def parse_program(text: str, filename: str = "<string>") -> sx.Program:
    p = _P(tokenize(text))
    raw_classes = []
    raw_accesses = []  # (name, raw channel)
    raw_type_aliases = {}
    raw_chan_aliases = {}
    main = None

    while p.peek().kind != "eof":
        if p.at("class"):
            raw_classes.append(_parse_class(p))
        elif p.at("access"):
            p.next()
            p.expect("<")
            proto = p.raw_channel()
            p.expect(">")
            name = p.lident("access point name")
            p.expect(";")
            raw_accesses.append((name, proto))
        elif p.at("type"):
            p.next()
            name = p.uident("type alias name")
            p.expect("=")
            if name in raw_type_aliases:
                raise ParseError(f"duplicate type alias {name!r}")
            raw_type_aliases[name] = p.raw_session()
            if p.at(";"):
                p.next()
        elif p.at("chantype"):
            p.next()
            name = p.uident("channel type alias name")
            p.expect("=")
            if name in raw_chan_aliases:
                raise ParseError(f"duplicate channel type alias {name!r}")
            raw_chan_aliases[name] = p.raw_channel()
            if p.at(";"):
                p.next()
        elif p.peek().kind == "ident" and p.peek().text == "main":
            p.next()
            cls = p.uident("class name")
            p.expect(".")
            m = p.lident("method name")
            p.expect(";")
            main = (cls, m)
        else:
            t = p.peek()
            raise ParseError(f"expected a declaration, found {t.text!r}", t.line, t.col)

    # Class states share the namespace with file-level aliases; class-local
    # names shadow the aliases.
    classes = {}
    for rc in raw_classes:
        if rc.name in classes:
            raise DuplicateClass(f"class {rc.name!r} declared more than once")
        session_defs = dict(raw_type_aliases)
        session_defs.update(rc.states)
        resolver = _Resolver(session_defs, raw_chan_aliases)
        session = resolver.session(rc.session)
        _check_session_wf(session, f"class {rc.name}")
        if not isinstance(sx.unfold(session), sx.Branch):
            raise ParseError(f"class {rc.name}: declared session must unfold to a branch")
        states = {}
        for sname in rc.states:
            st = resolver.session(("name", sname))
            _check_session_wf(st, f"{rc.name}.{sname}")
            states[sname] = st
        methods = {}
        for annot_raw, mname, pname, body, tok in rc.methods:
            if mname in methods:
                raise ParseError(f"duplicate method {mname!r} in class {rc.name}", tok.line, tok.col)
            annot = None
            if annot_raw is not None:
                req_raw, ens_raw, result_raw, ptype_raw = annot_raw
                req = _resolve_record(resolver, req_raw, rc.fields, rc.name)
                ens = _resolve_record(resolver, ens_raw, rc.fields, rc.name)
                if isinstance(ens, sx.VariantF):
                    raise ParseError(f"{rc.name}.{mname}: ens annotation cannot be a variant")
                annot = sx.MethodAnnotation(
                    req=req,
                    ens=ens,
                    result=resolver.vtype(result_raw),
                    param_type=resolver.vtype(ptype_raw),
                )
            methods[mname] = sx.MethodDef(mname, pname, body, annot)
        classes[rc.name] = sx.ClassDecl(
            name=rc.name,
            session=session,
            fields=tuple(rc.fields),
            methods=methods,
            states=states,
        )

    top_resolver = _Resolver(dict(raw_type_aliases), raw_chan_aliases)
    session_aliases = {}
    for name in raw_type_aliases:
        s = top_resolver.session(("name", name))
        _check_session_wf(s, f"type {name}")
        session_aliases[name] = s
    channel_aliases = {}
    for name in raw_chan_aliases:
        c = top_resolver.channel(("cname", name))
        _check_session_wf(c, f"chantype {name}")
        channel_aliases[name] = c
    access_points = {}
    for name, proto in raw_accesses:
        if name in access_points:
            raise ParseError(f"duplicate access point {name!r}")
        c = top_resolver.channel(proto)
        _check_session_wf(c, f"access point {name}")
        access_points[name] = c

    program = sx.Program(
        classes=classes,
        access_points=access_points,
        session_aliases=session_aliases,
        channel_aliases=channel_aliases,
        main=main,
    )
    _resolve_bodies(program)
    return program


def _parse_class(p: _P) -> _RawClass:
    p.expect("class")
    name = p.uident("class name")
    p.expect("{")
    p.expect("session")
    session = p.raw_session()
    states = {}
    if p.at("where"):
        p.next()
        while True:
            t = p.peek()
            if t.kind == "ident" and _is_upper(t.text) and p.at("=", 1):
                sname = p.uident()
                p.expect("=")
                if sname in states:
                    raise ParseError(f"duplicate state {sname!r}", t.line, t.col)
                states[sname] = p.raw_session()
                if p.at(","):
                    p.next()
                continue
            break
    fields = []
    methods = []
    while not p.at("}"):
        t = p.peek()
        if p.at("req"):
            methods.append(_parse_annotated_method(p))
        elif t.kind == "ident" and not _is_upper(t.text) and p.peek(1).text in (";", ","):
            fields.append(p.lident("field name"))
            while p.at(","):
                p.next()
                fields.append(p.lident("field name"))
            p.expect(";")
        elif t.kind == "ident" and not _is_upper(t.text) and p.at("(", 1):
            mname = p.lident("method name")
            p.expect("(")
            pname = "_x" if p.at(")") else p.lident("parameter name")
            p.expect(")")
            p.expect("{")
            body = p.stmts()
            p.expect("}")
            methods.append((None, mname, pname, body, t))
        else:
            raise ParseError(
                f"expected a field, method or '}}', found {t.text!r}", t.line, t.col
            )
    p.expect("}")
    return _RawClass(name, session, states, fields, methods)


def _parse_annotated_method(p: _P):
    tok = p.peek()
    p.expect("req")
    req = _parse_field_binds(p)
    p.expect("ens")
    ens = _parse_field_binds(p)
    result = p.raw_vtype()
    mname = p.lident("method name")
    p.expect("(")
    if p.at(")"):
        ptype, pname = ("null",), "_x"
    else:
        ptype = p.raw_vtype()
        pname = p.lident("parameter name")
    p.expect(")")
    p.expect("{")
    body = p.stmts()
    p.expect("}")
    return ((req, ens, result, ptype), mname, pname, body, tok)


def _parse_field_binds(p: _P):
    binds = []
    while True:
        t = p.raw_vtype()
        f = p.lident("field name")
        binds.append((f, t))
        if p.at(","):
            p.next()
            continue
        break
    return tuple(binds)


def _resolve_record(resolver, binds, fields, cls_name):
    typed = {f: resolver.vtype(t) for f, t in binds}
    missing = [f for f in fields if f not in typed]
    extra = [f for f in typed if f not in fields]
    if missing or extra:
        raise ParseError(
            f"class {cls_name}: annotation fields {sorted(typed)} do not match "
            f"declared fields {list(fields)}"
        )
    return sx.RecordF(tuple((f, typed[f]) for f in fields))


def _resolve_bodies(program: sx.Program):
    """Rewrite bare identifiers to parameter refs, field reads or access names."""
    for cls in program.classes.values():
        resolved = {}
        for m in cls.methods.values():
            body = _resolve_expr(m.body, m.param, cls, program)
            resolved[m.name] = sx.MethodDef(m.name, m.param, body, m.annotation)
        cls.methods.clear()
        cls.methods.update(resolved)


def _resolve_expr(e, param, cls, program):
    rec = lambda x: _resolve_expr(x, param, cls, program)
    if isinstance(e, sx.VarE):
        if e.name == param:
            return e
        if e.name in cls.fields:
            return sx.SwapE(e.name, sx.NULL_E)
        if e.name in program.access_points:
            return sx.AccessE(e.name)
        raise ParseError(f"class {cls.name}: unbound name {e.name!r}")
    if isinstance(e, sx.SwapE):
        if e.field == param:
            raise ParseError(f"class {cls.name}: cannot assign to parameter {e.field!r}")
        return sx.SwapE(e.field, rec(e.expr))
    if isinstance(e, sx.CallE):
        return sx.CallE(e.field, e.method, rec(e.arg))
    if isinstance(e, sx.SelfCallE):
        return sx.SelfCallE(e.method, rec(e.arg))
    if isinstance(e, sx.SeqE):
        return sx.SeqE(rec(e.first), rec(e.second))
    if isinstance(e, sx.SwitchE):
        return sx.SwitchE(rec(e.subject), tuple((l, rec(b)) for l, b in e.cases))
    if isinstance(e, sx.WhileE):
        return sx.WhileE(rec(e.cond), rec(e.body))
    if isinstance(e, sx.SpawnE):
        return sx.SpawnE(e.cls, e.method, rec(e.arg))
    return e


# ---------------------------------------------------------------------------
# Standalone type expressions (CLI, tests)
# ---------------------------------------------------------------------------


def parse_session_type(text: str, program: sx.Program = None) -> sx.SessionType:
    """Parse a session type expression; `Class.State` resolves declared states."""
    program = program or sx.Program(classes={})
    p = _P(tokenize(text))
    t = p.peek()
    if (
        t.kind == "ident"
        and _is_upper(t.text)
        and p.at(".", 1)
        and p.peek(2).kind == "ident"
        and t.text in program.classes
    ):
        cls = p.uident()
        p.expect(".")
        state = p.uident("state name")
        _expect_eof(p)
        decl = program.classes[cls]
        if state not in decl.states:
            raise UnboundStateName(f"class {cls} has no state {state!r}")
        return decl.states[state]
    resolver = _session_resolver(program)
    s = resolver.session(p.raw_session())
    _expect_eof(p)
    _check_session_wf(s, "type expression")
    return s


def parse_channel_type(text: str, program: sx.Program = None) -> sx.ChannelType:
    program = program or sx.Program(classes={})
    p = _P(tokenize(text))
    c = _session_resolver(program).channel(p.raw_channel())
    _expect_eof(p)
    _check_session_wf(c, "channel type expression")
    return c


def _session_resolver(program):
    return _Resolver(dict(program.session_aliases), dict(program.channel_aliases))


def _expect_eof(p):
    t = p.peek()
    if t.kind != "eof":
        raise ParseError(f"trailing input {t.text!r}", t.line, t.col)


def parse_file(path) -> sx.Program:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_program(fh.read(), filename=str(path))


def parse_files(paths) -> sx.Program:
    """Parse several .mst files as one program.

    Declarations (including access points) are shared across all files given
    to a single invocation, so the sources are resolved together.
    """
    texts = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            texts.append(fh.read())
    return parse_program("\n".join(texts), filename="+".join(str(p) for p in paths))
