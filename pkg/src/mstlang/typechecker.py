"""Static checking: per-class driver (check_class), the consistency algorithm
relating field typings to session types, and the expression checker.

The consistency algorithm carries a set of assumed (field typing, session
type) pairs so recursion through rec types terminates; the expression checker
is syntax-directed, with labels eagerly given type linkthis and a singleton
variant field typing, collapsed by join at the points of use.

check_class also records, for every branch session type it establishes
consistent, the field typing it was established under. The runtime monitor
reuses this table as its witness when a method call opens an object.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import syntax as sx
from .channels import translate_access
from .subtyping import (
    JoinUndefined,
    equivalent,
    join_field,
    join_records,
    subtype_any,
    subtype_value,
)
from .syntax import (
    Branch,
    EnumType,
    LinkField,
    LinkThis,
    NullType,
    RecordF,
    SessionType,
    VariantF,
    VariantS,
    unfold,
)

TRUE = "TRUE"
FALSE = "FALSE"

# error codes
METHOD_UNDECLARED = "MethodUndeclared"
RESULT_TYPE_MISMATCH = "ResultTypeMismatch"
VARIANT_SHAPE_MISMATCH = "VariantShapeMismatch"
DEPTH_LIMIT = "DepthLimitExceeded"
SWAP_ON_VARIANT = "SwapOnVariantField"
DISCARDED_LINK = "DiscardedLink"
SWITCH_COVERAGE = "SwitchLabelCoverage"
SWITCH_SHAPE = "SwitchShapeMismatch"
NO_SUCH_METHOD = "NoSuchMethod"
AMBIGUOUS_OVERLOAD = "AmbiguousOverload"
LOOP_INVARIANT = "LoopInvariantMismatch"
ANNOTATION_MISMATCH = "AnnotationMismatch"
MISSING_ANNOTATION = "MissingAnnotation"
UNBOUND_VARIABLE = "UnboundVariable"
NO_SUCH_FIELD = "NoSuchField"
UNKNOWN_CLASS = "UnknownClass"
SPAWN_UNAVAILABLE = "SpawnUnavailable"
JOIN_UNDEFINED = "JoinUndefined"
ARGUMENT_MISMATCH = "ArgumentMismatch"
INTERNAL_FORM = "InternalForm"
MAIN_MISSING = "MainMissing"
MAIN_UNAVAILABLE = "MainUnavailable"
CONSISTENCY = "ConsistencyFailure"


class CheckError(Exception):
    def __init__(self, code, detail, method=None):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail
        self.method = method


@dataclass
class ClassVerdict:
    name: str
    ok: bool
    code: str = ""
    detail: str = ""
    method: str = ""

    def line(self) -> str:
        if self.ok:
            return f"CLASS {self.name} OK"
        where = f" in {self.method}" if self.method else ""
        return f"CLASS {self.name} ERR {self.code}{where}: {self.detail}"


@dataclass
class CheckReport:
    classes: list = field(default_factory=list)
    program_errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.program_errors and all(v.ok for v in self.classes)

    def lines(self):
        out = [v.line() for v in self.classes]
        out.extend(f"PROGRAM ERR {e}" for e in self.program_errors)
        return out

    def verdict(self, cls_name) -> ClassVerdict:
        for v in self.classes:
            if v.name == cls_name:
                return v
        raise KeyError(cls_name)


@dataclass
class CheckContext:
    program: sx.Program
    # (class name, canon of branch session) -> list of (session, field typing)
    witnesses: dict = field(default_factory=dict)
    max_steps: int = 10_000

    def record_witness(self, cls_name, session, ftyping):
        key = (cls_name, session.canon())
        bucket = self.witnesses.setdefault(key, [])
        if all(f.canon() != ftyping.canon() for _, f in bucket):
            bucket.append((session, ftyping))

    def witnesses_for(self, cls_name, session):
        return self.witnesses.get((cls_name, session.canon()), [])


def resolve_signature(branch: Branch, method: str, arg_type) -> sx.MethodSig:
    """Unique entry for the method applicable to the argument type; several
    applicable overloads are disambiguated by the least parameter type."""
    named = branch.named(method)
    if not named:
        raise CheckError(NO_SUCH_METHOD, f"no method {method!r} in {branch!r}")
    applicable = [e for e in named if subtype_value(arg_type, e.param)]
    if not applicable:
        raise CheckError(
            NO_SUCH_METHOD,
            f"no overload of {method!r} accepts argument type {arg_type!r}",
        )
    if len(applicable) == 1:
        return applicable[0]
    least = [
        e
        for e in applicable
        if all(subtype_value(e.param, other.param) for other in applicable)
    ]
    if len(least) != 1:
        raise CheckError(AMBIGUOUS_OVERLOAD, f"ambiguous overloads of {method!r}")
    return least[0]


def _collapse(f_typing):
    """Join the cases of a variant field typing into a single record."""
    try:
        return join_records([r for _, r in f_typing.cases])
    except JoinUndefined as e:
        raise CheckError(JOIN_UNDEFINED, str(e)) from None


def _field_type(record: RecordF, f: str):
    if not isinstance(record, RecordF):
        raise CheckError(VARIANT_SHAPE_MISMATCH, "fields are hidden behind a variant typing")
    try:
        return record.get(f)
    except KeyError:
        raise CheckError(NO_SUCH_FIELD, f"no field {f!r}") from None


def _is_variant_session(t) -> bool:
    return isinstance(t, SessionType) and isinstance(unfold(t), VariantS)


def _branch_of(t, what):
    if not isinstance(t, SessionType):
        raise CheckError(NO_SUCH_METHOD, f"{what} has non-object type {t!r}")
    u = unfold(t)
    if not isinstance(u, Branch):
        raise CheckError(NO_SUCH_METHOD, f"{what} has variant type; switch on its tag first")
    return u


def _same_results(ts):
    first = ts[0]
    return all(
        t.canon() == first.canon()
        or (isinstance(t, SessionType) and isinstance(first, SessionType) and equivalent(t, first))
        for t in ts[1:]
    )


def infer_expr(ctx: CheckContext, cls: sx.ClassDecl, e: sx.Expr, F, V):
    """The expression checker: returns (type, field typing, parameter env).

    F is the current field typing of the enclosing object (record, or a
    variant immediately after a label); V is None or (name, type) for the
    method parameter, dropped when a linear parameter is consumed.
    """
    if isinstance(e, sx.NullE):
        return sx.NULL_T, F, V

    if isinstance(e, sx.AccessE):
        proto = ctx.program.access_points.get(e.name)
        if proto is None:
            raise CheckError(UNBOUND_VARIABLE, f"unknown access point {e.name!r}")
        return translate_access(proto), F, V

    if isinstance(e, sx.VarE):
        if V is None or V[0] != e.name:
            raise CheckError(UNBOUND_VARIABLE, f"unbound variable {e.name!r}")
        name, t = V
        v_out = None if isinstance(t, SessionType) else V
        return t, F, v_out

    if isinstance(e, sx.LabelE):
        if not isinstance(F, RecordF):
            raise CheckError(VARIANT_SHAPE_MISMATCH, "label produced under a variant field typing")
        return sx.LINK_THIS, VariantF(((e.label, F),)), V

    if isinstance(e, sx.NewE):
        decl = ctx.program.classes.get(e.cls)
        if decl is None:
            raise CheckError(UNKNOWN_CLASS, f"unknown class {e.cls!r}")
        return decl.session, F, V

    if isinstance(e, sx.SwapE):
        t, f1, v1 = infer_expr(ctx, cls, e.expr, F, V)
        if isinstance(t, LinkThis):
            if not isinstance(f1, VariantF):
                raise CheckError(VARIANT_SHAPE_MISMATCH, "linkthis without a variant field typing")
            labels = sorted(f1.labels)
            joined = _collapse(f1)
            old = _field_type(joined, e.field)
            if _is_variant_session(old):
                raise CheckError(SWAP_ON_VARIANT, f"field {e.field!r} holds a variant type")
            return old, joined.set(e.field, EnumType(frozenset(labels))), v1
        if isinstance(t, LinkField):
            # parking a tag in a field; the tagged field keeps its variant
            old = _field_type(f1, e.field)
            if _is_variant_session(old):
                raise CheckError(SWAP_ON_VARIANT, f"field {e.field!r} holds a variant type")
            return old, f1.set(e.field, t), v1
        old = _field_type(f1, e.field)
        if _is_variant_session(old):
            raise CheckError(SWAP_ON_VARIANT, f"field {e.field!r} holds a variant type")
        return old, f1.set(e.field, t), v1

    if isinstance(e, sx.CallE):
        t, f1, v1 = infer_expr(ctx, cls, e.arg, F, V)
        if isinstance(t, LinkThis):
            if not isinstance(f1, VariantF):
                raise CheckError(VARIANT_SHAPE_MISMATCH, "linkthis without a variant field typing")
            labels = f1.labels
            joined = _collapse(f1)
            branch = _branch_of(_field_type(joined, e.field), f"field {e.field!r}")
            entry = _resolve_enum_overload(branch, e.method, labels)
            result = LinkField(e.field) if isinstance(entry.result, LinkThis) else entry.result
            return result, joined.set(e.field, entry.cont), v1
        if isinstance(t, LinkField):
            raise CheckError(ARGUMENT_MISMATCH, "a tag bound to a field cannot be an argument")
        branch = _branch_of(_field_type(f1, e.field), f"field {e.field!r}")
        entry = resolve_signature(branch, e.method, t)
        result = LinkField(e.field) if isinstance(entry.result, LinkThis) else entry.result
        return result, f1.set(e.field, entry.cont), v1

    if isinstance(e, sx.SelfCallE):
        t, f1, v1 = infer_expr(ctx, cls, e.arg, F, V)
        mdef = cls.method(e.method)
        if mdef is None:
            raise CheckError(METHOD_UNDECLARED, f"no method {e.method!r} in class {cls.name}")
        if mdef.annotation is None:
            raise CheckError(
                MISSING_ANNOTATION, f"self-called method {e.method!r} has no req/ens annotation"
            )
        ann = mdef.annotation
        if isinstance(t, LinkThis):
            if not isinstance(f1, VariantF):
                raise CheckError(VARIANT_SHAPE_MISMATCH, "linkthis without a variant field typing")
            if not isinstance(ann.param_type, EnumType) or not f1.labels <= ann.param_type.labels:
                raise CheckError(ARGUMENT_MISMATCH, f"argument of {e.method!r} mismatches annotation")
            joined = _collapse(f1)
            if not subtype_any(joined, ann.req):
                raise CheckError(
                    ANNOTATION_MISMATCH, f"fields do not satisfy req of {e.method!r}"
                )
        else:
            if not subtype_value(t, ann.param_type):
                raise CheckError(ARGUMENT_MISMATCH, f"argument of {e.method!r} mismatches annotation")
            if not subtype_any(f1, ann.req):
                raise CheckError(
                    ANNOTATION_MISMATCH, f"fields do not satisfy req of {e.method!r}"
                )
        return ann.result, ann.ens, v1

    if isinstance(e, sx.SeqE):
        t, f1, v1 = infer_expr(ctx, cls, e.first, F, V)
        if isinstance(t, LinkField):
            raise CheckError(DISCARDED_LINK, "discarding a tag bound to a field")
        if isinstance(t, LinkThis):
            if not isinstance(f1, VariantF):
                raise CheckError(VARIANT_SHAPE_MISMATCH, "linkthis without a variant field typing")
            f1 = _collapse(f1)
        return infer_expr(ctx, cls, e.second, f1, v1)

    if isinstance(e, sx.SwitchE):
        return _infer_switch(ctx, cls, e, F, V)

    if isinstance(e, sx.WhileE):
        return _infer_while(ctx, cls, e, F, V)

    if isinstance(e, sx.SpawnE):
        t, f1, v1 = infer_expr(ctx, cls, e.arg, F, V)
        if not isinstance(t, NullType):
            raise CheckError(ARGUMENT_MISMATCH, "spawn argument must have type Null")
        decl = ctx.program.classes.get(e.cls)
        if decl is None:
            raise CheckError(UNKNOWN_CLASS, f"unknown class {e.cls!r}")
        u = unfold(decl.session)
        ok = isinstance(u, Branch) and any(
            en.name == e.method
            and isinstance(en.param, NullType)
            and isinstance(en.result, NullType)
            for en in u.entries
        )
        if not ok:
            raise CheckError(
                SPAWN_UNAVAILABLE,
                f"Null {e.method}(Null) is not available in {e.cls}.session",
            )
        return sx.NULL_T, f1, v1

    raise CheckError(INTERNAL_FORM, f"internal form {type(e).__name__} in a source program")


def _resolve_enum_overload(branch: Branch, method: str, labels) -> sx.MethodSig:
    """Overload resolution when the argument is a tag of a variant typing:
    the parameter must be an enumeration covering all the variant's labels."""
    named = [
        en
        for en in branch.named(method)
        if isinstance(en.param, EnumType) and labels <= en.param.labels
    ]
    if not named:
        raise CheckError(NO_SUCH_METHOD, f"no overload of {method!r} accepts labels {set(labels)}")
    if len(named) == 1:
        return named[0]
    least = [
        en for en in named if all(en.param.labels <= other.param.labels for other in named)
    ]
    if len(least) != 1:
        raise CheckError(AMBIGUOUS_OVERLOAD, f"ambiguous overloads of {method!r}")
    return least[0]


def _infer_switch(ctx, cls, e, F, V):
    u, f1, v1 = infer_expr(ctx, cls, e.subject, F, V)
    case_labels = e.labels
    results = []

    def run_cases(labels, env_for):
        for l in labels:
            try:
                body = e.case(l)
            except KeyError:
                raise CheckError(
                    SWITCH_COVERAGE, f"switch lacks case {l!r} required by the subject type"
                ) from None
            results.append(infer_expr(ctx, cls, body, env_for(l), v1))

    if isinstance(u, EnumType):
        if not u.labels <= case_labels:
            raise CheckError(
                SWITCH_COVERAGE,
                f"subject labels {set(u.labels)} exceed switch cases {set(case_labels)}",
            )
        run_cases([l for l, _ in e.cases if l in u.labels], lambda l: f1)
    elif isinstance(u, LinkThis):
        if not isinstance(f1, VariantF):
            raise CheckError(VARIANT_SHAPE_MISMATCH, "linkthis without a variant field typing")
        if not f1.labels <= case_labels:
            raise CheckError(SWITCH_COVERAGE, "variant labels exceed switch cases")
        joined = _collapse(f1)
        run_cases([l for l, _ in e.cases if l in f1.labels], lambda l: joined)
    elif isinstance(u, LinkField):
        fld = u.field
        target = _field_type(f1, fld)
        tu = unfold(target) if isinstance(target, SessionType) else None
        if not isinstance(tu, VariantS):
            raise CheckError(SWITCH_SHAPE, f"field {fld!r} is not of variant type")
        if not tu.labels <= case_labels:
            raise CheckError(SWITCH_COVERAGE, "variant labels exceed switch cases")
        run_cases(
            [l for l, _ in e.cases if l in tu.labels],
            lambda l: f1.set(fld, tu.case(l)),
        )
    else:
        raise CheckError(SWITCH_SHAPE, f"cannot switch on type {u!r}")

    types = [t for t, _, _ in results]
    if not _same_results(types):
        raise CheckError(SWITCH_SHAPE, "switch branches have different types")
    v_outs = [v for _, _, v in results]
    if any(v != v_outs[0] for v in v_outs[1:]):
        raise CheckError(SWITCH_SHAPE, "switch branches treat the parameter differently")
    try:
        f_out = results[0][1]
        for _, f, _ in results[1:]:
            f_out = join_field(f_out, f)
    except JoinUndefined as err:
        raise CheckError(JOIN_UNDEFINED, str(err)) from None
    return types[0], f_out, v_outs[0]


def _infer_while(ctx, cls, e, F, V):
    bool_labels = frozenset({TRUE, FALSE})
    u, f1, v1 = infer_expr(ctx, cls, e.cond, F, V)

    def check_body(f_start):
        tb, fb, vb = infer_expr(ctx, cls, e.body, f_start, v1)
        if isinstance(tb, LinkThis):
            if not isinstance(fb, VariantF):
                raise CheckError(VARIANT_SHAPE_MISMATCH, "linkthis without a variant field typing")
            fb = _collapse(fb)
            tb = sx.NULL_T
        if not isinstance(tb, NullType):
            raise CheckError(LOOP_INVARIANT, "loop body must have type Null")
        if not (equivalent(fb, F) and vb == V):
            raise CheckError(
                LOOP_INVARIANT, "loop body does not restore the field typing of entry"
            )

    if isinstance(u, EnumType):
        if not u.labels <= bool_labels:
            raise CheckError(SWITCH_SHAPE, "loop condition is not boolean")
        check_body(f1)
        return sx.NULL_T, f1, v1
    if isinstance(u, LinkThis):
        if not isinstance(f1, VariantF) or not f1.labels <= bool_labels:
            raise CheckError(SWITCH_SHAPE, "loop condition is not boolean")
        joined = _collapse(f1)
        check_body(joined)
        return sx.NULL_T, joined, v1
    if isinstance(u, LinkField):
        fld = u.field
        target = _field_type(f1, fld)
        tu = unfold(target) if isinstance(target, SessionType) else None
        if not isinstance(tu, VariantS) or tu.labels != bool_labels:
            raise CheckError(
                SWITCH_SHAPE, f"field {fld!r} must have a TRUE/FALSE variant type"
            )
        check_body(f1.set(fld, tu.case(TRUE)))
        return sx.NULL_T, f1.set(fld, tu.case(FALSE)), v1
    raise CheckError(SWITCH_SHAPE, f"cannot loop on condition type {u!r}")


# ---------------------------------------------------------------------------
# Consistency (field typing vs session type) and the class driver
# ---------------------------------------------------------------------------


def consistency(ctx: CheckContext, cls: sx.ClassDecl, session, ftyping, delta=None, _steps=None):
    """Establish that an object of this class with fields `ftyping` can be
    viewed as `session`; returns the extended assumption set."""
    if delta is None:
        delta = set()
    if _steps is None:
        _steps = [0]
    key = (ftyping.canon(), session.canon())
    if key in delta:
        return delta
    _steps[0] += 1
    if _steps[0] > ctx.max_steps:
        raise CheckError(DEPTH_LIMIT, f"consistency exceeded {ctx.max_steps} steps")

    if isinstance(session, sx.RecS):
        delta.add(key)
        unfolded = sx.subst_session(session.body, session.var, session)
        return consistency(ctx, cls, unfolded, ftyping, delta, _steps)

    if isinstance(session, Branch):
        if not isinstance(ftyping, RecordF):
            raise CheckError(
                VARIANT_SHAPE_MISMATCH, f"state {session!r} needs a record field typing"
            )
        ctx.record_witness(cls.name, session, ftyping)
        for entry in session.entries:
            mdef = cls.method(entry.name)
            if mdef is None:
                raise CheckError(
                    METHOD_UNDECLARED,
                    f"session mentions {entry.name!r} but the class does not define it",
                    method=entry.name,
                )
            try:
                t, f_out, _ = infer_expr(
                    ctx, cls, mdef.body, ftyping, (mdef.param, entry.param)
                )
            except CheckError as err:
                if err.method is None:
                    err.method = entry.name
                raise
            _continue_consistency(ctx, cls, entry, t, f_out, delta, _steps)
        return delta

    if isinstance(session, VariantS):
        if not isinstance(ftyping, VariantF):
            raise CheckError(
                VARIANT_SHAPE_MISMATCH, f"variant state {session!r} needs a variant field typing"
            )
        if not ftyping.labels <= session.labels:
            raise CheckError(
                VARIANT_SHAPE_MISMATCH,
                f"field typing labels {set(ftyping.labels)} exceed state labels",
            )
        for l, rec in ftyping.cases:
            consistency(ctx, cls, session.case(l), rec, delta, _steps)
        return delta

    raise CheckError(CONSISTENCY, f"cannot relate field typing to {session!r}")


def _continue_consistency(ctx, cls, entry, t, f_out, delta, _steps):
    name = entry.name
    if _result_subtype(t, entry.result):
        consistency(ctx, cls, entry.cont, f_out, delta, _steps)
        return
    if isinstance(t, EnumType) and isinstance(entry.result, LinkThis):
        if not isinstance(f_out, RecordF):
            raise CheckError(VARIANT_SHAPE_MISMATCH, "enumeration with variant fields", method=name)
        uniform = VariantF(tuple((l, f_out) for l in sorted(t.labels)))
        consistency(ctx, cls, entry.cont, uniform, delta, _steps)
        return
    if isinstance(t, LinkThis) and isinstance(entry.result, EnumType):
        if not isinstance(f_out, VariantF) or not f_out.labels <= entry.result.labels:
            raise CheckError(
                RESULT_TYPE_MISMATCH,
                f"body of {name!r} yields labels outside {entry.result!r}",
                method=name,
            )
        try:
            joined = join_records([r for _, r in f_out.cases])
        except JoinUndefined as err:
            raise CheckError(JOIN_UNDEFINED, str(err), method=name) from None
        consistency(ctx, cls, entry.cont, joined, delta, _steps)
        return
    raise CheckError(
        RESULT_TYPE_MISMATCH,
        f"body of {name!r} has type {t!r}, declared {entry.result!r}",
        method=name,
    )


def _result_subtype(t, declared):
    if isinstance(t, LinkThis):
        return isinstance(declared, LinkThis)
    if isinstance(t, LinkField):
        return False
    return subtype_value(t, declared)


def check_class(ctx: CheckContext, cls: sx.ClassDecl) -> ClassVerdict:
    try:
        consistency(ctx, cls, cls.session, cls.initial_field_typing())
        for mdef in cls.methods.values():
            if mdef.annotation is not None:
                _check_annotated(ctx, cls, mdef)
        return ClassVerdict(cls.name, True)
    except CheckError as err:
        return ClassVerdict(cls.name, False, err.code, err.detail, err.method or "")


def _check_annotated(ctx, cls, mdef):
    ann = mdef.annotation
    try:
        t, f_out, _ = infer_expr(ctx, cls, mdef.body, ann.req, (mdef.param, ann.param_type))
    except CheckError as err:
        if err.method is None:
            err.method = mdef.name
        raise
    if _result_subtype(t, ann.result):
        if subtype_any(f_out, ann.ens):
            return
    elif isinstance(t, LinkThis) and isinstance(ann.result, EnumType):
        try:
            joined = (
                join_records([r for _, r in f_out.cases])
                if isinstance(f_out, VariantF)
                else None
            )
        except JoinUndefined as err:
            raise CheckError(JOIN_UNDEFINED, str(err), method=mdef.name) from None
        if (
            joined is not None
            and f_out.labels <= ann.result.labels
            and subtype_any(joined, ann.ens)
        ):
            return
    raise CheckError(
        ANNOTATION_MISMATCH,
        f"body of {mdef.name!r} does not meet its req/ens annotation",
        method=mdef.name,
    )


def check_program(program: sx.Program, max_steps: int = 10_000):
    """Check every class; validate the main designation. Returns the report
    and the context (whose witness table the monitor consumes)."""
    ctx = CheckContext(program, max_steps=max_steps)
    report = CheckReport()
    for cls in program.classes.values():
        report.classes.append(check_class(ctx, cls))
    if program.main is None:
        report.program_errors.append(f"{MAIN_MISSING}: no main designation")
    else:
        cname, mname = program.main
        decl = program.classes.get(cname)
        if decl is None:
            report.program_errors.append(f"{MAIN_UNAVAILABLE}: unknown main class {cname!r}")
        else:
            u = unfold(decl.session)
            ok = isinstance(u, Branch) and any(
                e.name == mname and isinstance(e.param, NullType) for e in u.entries
            )
            if not ok or decl.method(mname) is None:
                report.program_errors.append(
                    f"{MAIN_UNAVAILABLE}: {mname!r} is not immediately available on {cname!r}"
                )
    return report, ctx
