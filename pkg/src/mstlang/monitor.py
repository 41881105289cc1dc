"""Runtime monitoring: maintains typing environments across reductions,
re-checks every reached state against them, and validates per-object call
traces against the session-type transition system.

Per thread the monitor keeps an environment mapping the heap roots (and any
in-flight endpoints) to types; objects currently executing a method appear
as nested internal types along the current path. A global channel
environment maps endpoints to channel session types, advanced in lockstep on
both sides of every communication. Call traces live in one global map since
object identifiers are configuration-unique; they move (renamed) with object
transfer.

Monitoring always starts from the initial configuration, whose current path
is a bare root, so every later path extends it and trace conformance is
meaningful at each step; monitoring a run from an arbitrary intermediate
state is not supported. State checking validates the heap against the
*tracked* environments; re-deriving an environment from the heap alone
(searching over the orders in which objects could have been added) is a
possible extension, not attempted here.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

from . import syntax as sx
from .channels import dual, subtype_channel, translate_access, translate_channel
from .interpreter import RuntimeFault, StepEvent, decompose
from .render import render_type
from .subtyping import equivalent, subtype_any, subtype_session, subtype_value
from .syntax import (
    Branch,
    EnumType,
    LinkField,
    LinkThis,
    NullType,
    ObjectInternal,
    Path,
    RecordF,
    SessionType,
    VariantF,
    VariantS,
    unfold,
)
from .typechecker import CheckContext, CheckError, consistency, resolve_signature


class MonitorViolation(Exception):
    def __init__(self, kind, step, thread, detail):
        super().__init__(f"VIOLATION {kind} step={step} thread=t{thread} {detail}")
        self.kind = kind
        self.step = step
        self.thread = thread
        self.detail = detail


TRACKING_FAULT = "TrackingFault"
STATE_ILL_TYPED = "StateIllTyped"
TRACE_INVALID = "TraceInvalid"
LINEARITY = "LinearityViolation"
DUALITY = "DualityViolation"


# ---------------------------------------------------------------------------
# Call traces and the LTS on session types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceCall:
    method: str
    param: object = None  # canonical form of the resolved parameter type, if known

    def __str__(self):
        return self.method


@dataclass(frozen=True)
class TraceLabel:
    label: str

    def __str__(self):
        return self.label


class TypeErrorTransition(Exception):
    pass


def _short(t, width=72):
    text = render_type(t)
    return text if len(text) <= width else text[: width - 3] + "..."


def lts_step(s: SessionType, action) -> tuple:
    """Successor states of one trace element. A call forks over same-name
    overloads when no parameter type was recorded; a label resolves a variant
    and is the identity on any other type."""
    u = unfold(s)
    if isinstance(action, TraceCall):
        if not isinstance(u, Branch):
            raise TypeErrorTransition(f"call {action.method!r} on {_short(s)}")
        named = u.named(action.method)
        if action.param is not None:
            # the recorded parameter refines the choice among overloads, but
            # validity is judged on names: fall back when it matches nothing
            # (the call may have been resolved against a supertype's entry)
            refined = [e for e in named if e.param.canon() == action.param]
            named = refined or named
        if not named:
            raise TypeErrorTransition(f"call {action.method!r} on {_short(u)}")
        return tuple(e.cont for e in named)
    if isinstance(u, VariantS):
        if action.label not in u.labels:
            raise TypeErrorTransition(f"label {action.label!r} on {_short(u)}")
        return (u.case(action.label),)
    return (s,)


def replay_trace(session: SessionType, trace) -> tuple:
    """All states reachable after the trace; raises at the first element
    that no current state can fire."""
    states = (session,)
    for pos, action in enumerate(trace, start=1):
        nxt = []
        last_err = None
        for st in states:
            try:
                nxt.extend(lts_step(st, action))
            except TypeErrorTransition as e:
                last_err = e
        if not nxt:
            raise TypeErrorTransition(f"at position {pos}: {last_err}")
        states = tuple(nxt)
    return states


def parse_trace(text: str, program=None, cls=None) -> tuple:
    """Whitespace-separated `m l m l ...` words: lowercase-initial words are
    method calls, uppercase-initial words are labels."""
    out = []
    for word in text.split():
        if word[0].isupper():
            out.append(TraceLabel(word))
        else:
            out.append(TraceCall(word))
    return tuple(out)


def extend_traces(tr: dict, ev: StepEvent, before, resolved_param=None) -> dict:
    """New call-trace map after one step: calls append the method to the
    callee's trace, returns of labels append the label to the returning
    object's trace, fresh objects start empty, object transfer renames."""
    if ev.rule == "Call":
        out = dict(tr)
        out[ev.oid] = tr.get(ev.oid, ()) + (TraceCall(ev.method, resolved_param),)
        return out
    if ev.rule == "Return" and isinstance(ev.value, sx.LabelE):
        th = before.threads[ev.threads[0]]
        oid = th.heap.resolve_id(th.path)
        out = dict(tr)
        out[oid] = tr.get(oid, ()) + (TraceLabel(ev.value.label),)
        return out
    if ev.rule == "New":
        out = dict(tr)
        out[ev.oid] = ()
        return out
    if ev.rule == "Spawn":
        # a spawned root starts as if its method had just been called
        out = dict(tr)
        out[ev.oid] = (TraceCall(ev.method, sx.NULL_T.canon()),)
        return out
    if ev.rule == "ComObj":
        phi = dict(ev.phi)
        return {phi.get(o, o): t for o, t in tr.items()}
    return tr


def traces_valid(program: sx.Program, tr: dict, conf) -> tuple:
    """(True, None) when every object's trace replays from its class session;
    otherwise (False, detail of the first offender)."""
    for th in conf.threads:
        for oid, rec in th.heap.entries:
            decl = program.classes.get(rec.cls)
            if decl is None:
                return False, f"object {oid} has unknown class {rec.cls}"
            try:
                replay_trace(decl.session, tr.get(oid, ()))
            except TypeErrorTransition as e:
                return False, f"object {oid} ({rec.cls}): {e}"
    return True, None


# ---------------------------------------------------------------------------
# Environment plumbing
# ---------------------------------------------------------------------------


@dataclass
class Frame:
    field: str
    cls: str
    cont: SessionType  # continuation recorded at the call


@dataclass
class ActiveLink:
    """An in-flight label that is the tag of a field's variant type."""

    path: Path
    field: str
    variant: SessionType  # the full variant, for re-widening on park


@dataclass
class ThreadEnv:
    gamma: dict = dc_field(default_factory=dict)  # ("obj", oid)/("chan", c, p) -> type
    frames: list = dc_field(default_factory=list)
    active_link: object = None  # ActiveLink | None


def env_type_at(gamma: dict, path: Path):
    t = gamma.get(("obj", path.root))
    if t is None:
        raise RuntimeFault(f"no environment entry for {path.root}")
    for f in path.fields:
        if not isinstance(t, ObjectInternal) or not isinstance(t.typing, RecordF):
            raise RuntimeFault(f"path {path} crosses a non-open object")
        t = t.typing.get(f)
    return t


def env_set_at(gamma: dict, path: Path, new_type) -> None:
    if not path.fields:
        gamma[("obj", path.root)] = new_type
        return
    root = gamma[("obj", path.root)]
    gamma[("obj", path.root)] = _rebuild(root, path.fields, new_type)


def _rebuild(t, fields, new_type):
    if not fields:
        return new_type
    if not isinstance(t, ObjectInternal) or not isinstance(t.typing, RecordF):
        raise RuntimeFault("path crosses a non-open object")
    f = fields[0]
    child = _rebuild(t.typing.get(f), fields[1:], new_type)
    return ObjectInternal(t.cls, t.typing.set(f, child))


def env_field_type(gamma, path: Path, f: str):
    t = env_type_at(gamma, path)
    if not isinstance(t, ObjectInternal) or not isinstance(t.typing, RecordF):
        raise RuntimeFault(f"object at {path} is not open")
    return t.typing.get(f)


def env_set_field(gamma, path: Path, f: str, new_type) -> None:
    t = env_type_at(gamma, path)
    env_set_at(gamma, path, ObjectInternal(t.cls, t.typing.set(f, new_type)))


# ---------------------------------------------------------------------------
# Monitor
# ---------------------------------------------------------------------------


class Monitor:
    """Tracks environments and traces; call on_step after every reduction."""

    def __init__(self, program, ctx: CheckContext, verify_states=True, verify_traces=True):
        self.program = program
        self.ctx = ctx
        self.verify_states = verify_states
        self.verify_traces = verify_traces
        self.envs = []  # ThreadEnv per thread
        self.theta = {}  # (chan, polarity) -> ChannelType
        self.theta_owner = {}  # (chan, polarity) -> thread index
        self.traces = {}
        self.step_no = 0
        self._consistency_cache = {}
        self._reached = {}  # oid -> tuple of session states after its trace

    # -- setup ----------------------------------------------------------------

    def start(self, conf):
        cname, mname = self.program.main
        decl = self.program.cls(cname)
        env = ThreadEnv()
        env.gamma[("obj", "top")] = ObjectInternal(cname, decl.initial_field_typing())
        self.envs = [env]
        self.traces = {"top": (TraceCall(mname, sx.NULL_T.canon()),)}
        self._reached = {}
        if self.verify_states:
            self.check_state(conf)
        if self.verify_traces:
            self.check_traces(conf)

    # -- helpers ---------------------------------------------------------------

    def fault(self, kind, thread, detail):
        raise MonitorViolation(kind, self.step_no, thread, detail)

    def _extend(self, ev, before, resolved_param=None):
        """Extend traces and advance the cached per-object reached states."""
        old = self.traces
        self.traces = extend_traces(old, ev, before, resolved_param)
        if ev.rule == "Call":
            self._advance(ev.threads[0], ev.oid, TraceCall(ev.method, resolved_param))
        elif ev.rule == "Return" and isinstance(ev.value, sx.LabelE):
            th = before.threads[ev.threads[0]]
            oid = th.heap.resolve_id(th.path)
            self._advance(ev.threads[0], oid, TraceLabel(ev.value.label))
        elif ev.rule == "New":
            self._reached[ev.oid] = (self.program.cls(ev.cls).session,)
        elif ev.rule == "Spawn":
            self._reached[ev.oid] = None  # filled lazily
        elif ev.rule == "ComObj":
            phi = dict(ev.phi)
            self._reached = {phi.get(o, o): s for o, s in self._reached.items()}

    def _advance(self, thread, oid, action):
        states = self._reached.get(oid)
        if states is None:
            return  # computed lazily on demand
        nxt = []
        for st in states:
            try:
                nxt.extend(lts_step(st, action))
            except TypeErrorTransition:
                pass
        if not nxt:
            if self.verify_traces:
                self.fault(TRACE_INVALID, thread, f"object {oid}: trace cannot fire {action}")
            self._reached[oid] = None
            return
        self._reached[oid] = tuple(nxt)

    def _reached_states(self, oid, cls_name):
        states = self._reached.get(oid)
        if states is None:
            decl = self.program.classes.get(cls_name)
            if decl is None:
                raise TypeErrorTransition(f"unknown class {cls_name}")
            states = replay_trace(decl.session, self.traces.get(oid, ()))
            self._reached[oid] = states
        return states

    def _consistency_holds(self, cls_name, session, ftyping):
        """Does `ftyping` support viewing the object as `session`?

        A runtime field typing can be strictly finer than anything the static
        run visited (actual labels narrow enumerations), and the consistency
        algorithm is not complete under such refinement (its loop clause
        demands an exact recurrence). Soundness of subtyping for fields says
        a refinement of a consistent typing is consistent, so accept through
        any recorded witness the runtime typing refines, and only otherwise
        run the algorithm directly.
        """
        key = (cls_name, session.canon(), ftyping.canon())
        hit = self._consistency_cache.get(key)
        if hit is None:
            hit = (False, "no witness")
            for _, witness in self.ctx.witnesses_for(cls_name, unfold(session)):
                if subtype_any(ftyping, witness):
                    hit = True
                    break
            if hit is not True:
                try:
                    consistency(self.ctx, self.program.cls(cls_name), session, ftyping)
                    hit = True
                except CheckError as e:
                    hit = (False, str(e))
            self._consistency_cache[key] = hit
        return hit

    def _consistent(self, cls_name, session, ftyping, thread):
        hit = self._consistency_holds(cls_name, session, ftyping)
        if hit is not True:
            self.fault(
                TRACKING_FAULT,
                thread,
                f"fields of {cls_name} not consistent with {render_type(session)}: {hit[1]}",
            )

    def value_type(self, env: ThreadEnv, v, thread, consume=False):
        """Type of an in-flight value under the tracked environment."""
        if isinstance(v, sx.NullE):
            return sx.NULL_T
        if isinstance(v, sx.AccessE):
            proto = self.program.access_points.get(v.name)
            if proto is None:
                self.fault(TRACKING_FAULT, thread, f"unknown access point {v.name!r}")
            return translate_access(proto)
        if isinstance(v, sx.ObjIdE):
            key = ("obj", v.oid)
            if key not in env.gamma:
                self.fault(TRACKING_FAULT, thread, f"value {v.oid} missing from the environment")
            return env.gamma.pop(key) if consume else env.gamma[key]
        if isinstance(v, sx.EndpointE):
            key = ("chan", v.chan, v.polarity)
            if key not in env.gamma:
                self.fault(TRACKING_FAULT, thread, f"endpoint {v.chan}{v.polarity} missing")
            return env.gamma.pop(key) if consume else env.gamma[key]
        if isinstance(v, sx.LabelE):
            return EnumType(frozenset({v.label}))
        self.fault(TRACKING_FAULT, thread, f"unexpected value {v!r}")

    # -- the per-rule environment constructions --------------------------------

    def on_step(self, step_no, before, ev: StepEvent, after):
        self.step_no = step_no
        self.track(before, ev, after)
        if self.verify_states:
            self.check_state(after)
        if self.verify_traces:
            self.check_traces(after)

    def track(self, before, ev: StepEvent, after):
        rule = ev.rule
        if rule in ("While", "Switch", "SelfCall"):
            if rule == "Switch":
                env = self.envs[ev.threads[0]]
                env.active_link = None  # a switched tag was resolved earlier
            self._extend(ev, before)
            return
        handler = getattr(self, f"_track_{rule.lower()}")
        handler(before, ev, after)

    def _track_new(self, before, ev, after):
        env = self.envs[ev.threads[0]]
        env.gamma[("obj", ev.oid)] = self.program.cls(ev.cls).session
        self._extend(ev, before)

    def _track_seq(self, before, ev, after):
        i = ev.threads[0]
        env = self.envs[i]
        v = ev.value
        if isinstance(v, sx.ObjIdE):
            env.gamma.pop(("obj", v.oid), None)
        elif isinstance(v, sx.EndpointE):
            env.gamma.pop(("chan", v.chan, v.polarity), None)
        elif isinstance(v, sx.LabelE) and env.active_link is not None:
            self.fault(TRACKING_FAULT, i, "a tag bound to a field was discarded")
        self._extend(ev, before)

    def _track_swap(self, before, ev, after):
        i = ev.threads[0]
        env = self.envs[i]
        path = before.threads[i].path
        f = ev.field
        old_type = env_field_type(env.gamma, path, f)

        # type of the incoming value
        v_in = ev.value
        if isinstance(v_in, sx.LabelE) and env.active_link is not None:
            link = env.active_link
            if link.path != path:
                self.fault(TRACKING_FAULT, i, "tag parked outside its own object")
            t_in = LinkField(link.field)
            env_set_field(env.gamma, path, link.field, link.variant)
            env.active_link = None
        else:
            t_in = self.value_type(env, v_in, i, consume=True)

        # the outgoing value re-enters the environment
        v_out = ev.out_value
        if isinstance(v_out, sx.ObjIdE):
            env.gamma[("obj", v_out.oid)] = old_type
        elif isinstance(v_out, sx.EndpointE):
            env.gamma[("chan", v_out.chan, v_out.polarity)] = old_type
        elif isinstance(v_out, sx.LabelE) and isinstance(old_type, LinkField):
            target = env_field_type(env.gamma, path, old_type.field)
            tu = unfold(target) if isinstance(target, SessionType) else None
            if not isinstance(tu, VariantS) or v_out.label not in tu.labels:
                self.fault(TRACKING_FAULT, i, f"tag {v_out.label} does not match field {old_type.field}")
            env_set_field(env.gamma, path, old_type.field, tu.case(v_out.label))
            env.active_link = ActiveLink(path, old_type.field, target)

        env_set_field(env.gamma, path, f, t_in)
        self._extend(ev, before)

    def _track_call(self, before, ev, after):
        i = ev.threads[0]
        env = self.envs[i]
        th = before.threads[i]
        path = th.path
        f = ev.field
        t_field = env_field_type(env.gamma, path, f)
        if not isinstance(t_field, SessionType):
            self.fault(TRACKING_FAULT, i, f"call on field {f!r} of non-session type")
        branch = unfold(t_field)
        if not isinstance(branch, Branch):
            self.fault(TRACKING_FAULT, i, f"call on field {f!r} in a variant state")
        if isinstance(ev.arg, sx.LabelE) and env.active_link is not None:
            self.fault(TRACKING_FAULT, i, "a tag bound to a field used as an argument")
        t_arg = self.value_type(env, ev.arg, i)
        try:
            entry = resolve_signature(branch, ev.method, t_arg)
        except CheckError as e:
            self.fault(TRACKING_FAULT, i, str(e))
        # find a consistency witness for opening the callee
        callee = th.heap.record(ev.oid)
        witness = self._opening_witness(callee, branch, th.heap, i)
        env.frames.append(Frame(f, callee.cls, entry.cont))
        env_set_field(env.gamma, path, f, ObjectInternal(callee.cls, witness))
        self._extend(ev, before, resolved_param=entry.param.canon())

    def _opening_witness(self, callee, branch, heap, thread):
        candidates = self.ctx.witnesses_for(callee.cls, branch)
        for _, ftyping in candidates:
            if self._record_conforms(callee, ftyping, heap):
                return ftyping
        self.fault(
            TRACKING_FAULT,
            thread,
            f"no field typing witness for {callee.cls} at {render_type(branch)}",
        )

    def _record_conforms(self, rec, ftyping, heap) -> bool:
        """Does a heap record inhabit a record field typing? Fields of variant
        session type are resolved through their sibling tag first (the actual
        session type), then objects are checked by replaying their traces."""
        if not isinstance(ftyping, RecordF):
            return False
        if set(rec.field_names) != set(ftyping.fields):
            return False
        for name, v in rec.fields:
            t = ftyping.get(name)
            tu = unfold(t) if isinstance(t, SessionType) else None
            if isinstance(tu, VariantS):
                sel = self._actual_case(rec, ftyping, name, tu)
                if sel is None:
                    return False
                t = sel
            if not self._value_conforms(v, t, heap):
                return False
        return True

    def _actual_case(self, rec, ftyping, name, variant):
        """Actual session type of a variant-typed field: the component picked
        out by the sibling field that holds its tag."""
        for name2, v2 in rec.fields:
            t2 = ftyping.get(name2)
            if isinstance(t2, LinkField) and t2.field == name and isinstance(v2, sx.LabelE):
                if v2.label in variant.labels:
                    return variant.case(v2.label)
        return None

    def _value_conforms(self, v, t, heap) -> bool:
        if isinstance(t, NullType):
            return isinstance(v, sx.NullE)
        if isinstance(t, EnumType):
            return isinstance(v, sx.LabelE) and v.label in t.labels
        if isinstance(t, LinkField):
            return isinstance(v, sx.LabelE)  # the pairing is checked from the variant side
        if isinstance(t, ObjectInternal):
            if not isinstance(v, sx.ObjIdE) or not heap.has(v.oid):
                return False
            child = heap.record(v.oid)
            return child.cls == t.cls and self._record_conforms(child, t.typing, heap)
        if isinstance(t, SessionType):
            if isinstance(v, sx.ObjIdE):
                if not heap.has(v.oid):
                    return False
                child = heap.record(v.oid)
                try:
                    reached = self._reached_states(v.oid, child.cls)
                except TypeErrorTransition:
                    return False
                return any(subtype_session(r, t) for r in reached)
            if isinstance(v, sx.EndpointE):
                sigma = self.theta.get((v.chan, v.polarity))
                if sigma is None:
                    return False
                return subtype_session(translate_channel(sigma), t)
            if isinstance(v, sx.AccessE):
                proto = self.program.access_points.get(v.name)
                return proto is not None and subtype_session(translate_access(proto), t)
            return False
        return False

    def _track_return(self, before, ev, after):
        i = ev.threads[0]
        env = self.envs[i]
        if not env.frames:
            self.fault(TRACKING_FAULT, i, "return without a pending call")
        frame = env.frames.pop()
        path = before.threads[i].path
        if path.last() != frame.field:
            self.fault(TRACKING_FAULT, i, "return path does not match the pending call")
        inner = env_type_at(env.gamma, path)
        if not isinstance(inner, ObjectInternal) or not isinstance(inner.typing, RecordF):
            self.fault(TRACKING_FAULT, i, "returning object is not open")
        v = ev.value
        cont_u = unfold(frame.cont)
        if isinstance(v, sx.LabelE) and isinstance(cont_u, VariantS):
            if v.label not in cont_u.labels:
                self.fault(TRACKING_FAULT, i, f"returned tag {v.label} outside the variant")
            selected = cont_u.case(v.label)
            self._consistent(frame.cls, selected, inner.typing, i)
            env_set_at(env.gamma, path, selected)
            env.active_link = ActiveLink(path.parent(), frame.field, frame.cont)
        else:
            self._consistent(frame.cls, frame.cont, inner.typing, i)
            env_set_at(env.gamma, path, frame.cont)
        self._extend(ev, before)

    def _track_spawn(self, before, ev, after):
        if not isinstance(ev.arg, sx.NullE):
            self.fault(TRACKING_FAULT, ev.threads[0], "spawn argument is not null")
        decl = self.program.cls(ev.cls)
        env = ThreadEnv()
        env.gamma[("obj", ev.oid)] = ObjectInternal(ev.cls, decl.initial_field_typing())
        self.envs.append(env)
        self._extend(ev, before)

    def _track_init(self, before, ev, after):
        i, j = ev.threads
        sigma = self.program.access_points[ev.access]
        self.theta[(ev.chan, "+")] = sigma
        self.theta[(ev.chan, "-")] = dual(sigma)
        self.theta_owner[(ev.chan, "+")] = i
        self.theta_owner[(ev.chan, "-")] = j
        self.envs[i].gamma[("chan", ev.chan, "+")] = translate_channel(sigma)
        self.envs[j].gamma[("chan", ev.chan, "-")] = translate_channel(dual(sigma))
        self._extend(ev, before)

    def _com_sides(self, before, ev):
        """Sender/receiver thread indices, fields and endpoint polarities."""
        i, j = ev.threads
        th_s, th_r = before.threads[i], before.threads[j]
        redex_s, _ = decompose(th_s.expr)
        redex_r, _ = decompose(th_r.expr)
        ep_s = th_s.heap.resolve(th_s.path).get(redex_s.field)
        return i, j, th_s, th_r, redex_s.field, redex_r.field, ep_s.polarity

    def _check_third_party(self, conf, chan, i, j):
        for k, th in enumerate(conf.threads):
            if k in (i, j):
                continue
            eps = {c for c, _ in sx.heap_endpoints(th.heap) | sx.endpoints_of(th.expr)}
            if chan in eps:
                self.fault(LINEARITY, k, f"channel {chan} occurs in a third thread")

    def _track_combase(self, before, ev, after):
        i, j, th_s, th_r, f_s, f_r, pol = self._com_sides(before, ev)
        env_s, env_r = self.envs[i], self.envs[j]
        self._check_third_party(before, ev.chan, i, j)
        v = ev.value
        key_s, key_r = (ev.chan, pol), (ev.chan, "-" if pol == "+" else "+")
        if key_s not in self.theta or key_r not in self.theta:
            self.fault(TRACKING_FAULT, i, f"channel {ev.chan} missing from the channel environment")
        sig_s = unfold(self.theta[key_s])
        sig_r = unfold(self.theta[key_r])

        if isinstance(v, sx.LabelE) and env_s.active_link is not None:
            self.fault(TRACKING_FAULT, i, "a tag bound to a field was sent")

        # sender side
        if isinstance(sig_s, sx.ChanSelect):
            if not isinstance(v, sx.LabelE) or v.label not in sig_s.labels:
                self.fault(TRACKING_FAULT, i, f"selected label {v!r} not offered by {render_type(sig_s)}")
            new_s = sig_s.case(v.label)
        elif isinstance(sig_s, sx.ChanSend):
            t_v = self.value_type(env_s, v, i, consume=isinstance(v, sx.EndpointE))
            payload = sig_s.payload
            if isinstance(v, sx.EndpointE):
                moved = self.theta.get((v.chan, v.polarity))
                if moved is None:
                    self.fault(TRACKING_FAULT, i, f"delegated endpoint {v.chan}{v.polarity} untyped")
                if not isinstance(payload, sx.ChannelType) or not subtype_channel(moved, payload):
                    self.fault(TRACKING_FAULT, i, "delegated endpoint does not match the payload type")
                self.theta_owner[(v.chan, v.polarity)] = j
            else:
                if isinstance(payload, sx.ChannelType) or not subtype_value(t_v, payload):
                    self.fault(TRACKING_FAULT, i, f"sent value {v!r} does not match {render_type(payload)}")
            new_s = sig_s.cont
        else:
            self.fault(TRACKING_FAULT, i, f"send on channel of type {render_type(sig_s)}")
        self.theta[key_s] = new_s
        env_set_field(env_s.gamma, th_s.path, f_s, translate_channel(new_s))

        # receiver side
        if isinstance(sig_r, sx.ChanOffer):
            new_r = sig_r.case(v.label)
            variant = VariantS(tuple((l, translate_channel(c)) for l, c in sig_r.cases))
            env_set_field(env_r.gamma, th_r.path, f_r, translate_channel(new_r))
            env_r.active_link = ActiveLink(th_r.path, f_r, variant)
        elif isinstance(sig_r, sx.ChanRecv):
            new_r = sig_r.cont
            env_set_field(env_r.gamma, th_r.path, f_r, translate_channel(new_r))
            if isinstance(v, sx.EndpointE):
                env_r.gamma[("chan", v.chan, v.polarity)] = translate_channel(
                    self.theta[(v.chan, v.polarity)]
                )
        else:
            self.fault(TRACKING_FAULT, j, f"receive on channel of type {render_type(sig_r)}")
        self.theta[key_r] = new_r
        self._extend(ev, before)

    def _track_comobj(self, before, ev, after):
        i, j, th_s, th_r, f_s, f_r, pol = self._com_sides(before, ev)
        env_s, env_r = self.envs[i], self.envs[j]
        self._check_third_party(before, ev.chan, i, j)
        key_s, key_r = (ev.chan, pol), (ev.chan, "-" if pol == "+" else "+")
        sig_s = unfold(self.theta[key_s])
        sig_r = unfold(self.theta[key_r])
        if not isinstance(sig_s, sx.ChanSend) or not isinstance(sig_r, sx.ChanRecv):
            self.fault(TRACKING_FAULT, i, "object transfer on a non send/receive channel state")
        t_obj = env_s.gamma.pop(("obj", ev.oid), None)
        if t_obj is None:
            self.fault(TRACKING_FAULT, i, f"transferred object {ev.oid} missing from the environment")
        payload = sig_s.payload
        if not isinstance(payload, SessionType) or not subtype_session(t_obj, payload):
            self.fault(TRACKING_FAULT, i, "transferred object does not match the payload type")
        phi = dict(ev.phi)
        down, _ = th_s.heap.split(ev.oid)
        for chan, p in sx.heap_endpoints(down):
            self.theta_owner[(chan, p)] = j
        env_r.gamma[("obj", phi[ev.oid])] = t_obj
        self.theta[key_s] = sig_s.cont
        self.theta[key_r] = sig_r.cont
        env_set_field(env_s.gamma, th_s.path, f_s, translate_channel(sig_s.cont))
        env_set_field(env_r.gamma, th_r.path, f_r, translate_channel(sig_r.cont))
        self._extend(ev, before)

    # -- state checking ---------------------------------------------------------

    def check_state(self, conf):
        self._check_global_shape(conf)
        for i, th in enumerate(conf.threads):
            env = self.envs[i]
            self._check_heap_agreement(i, th, env)
            self._check_expression(i, th, env)
        self._check_duality()

    def _check_global_shape(self, conf):
        seen = {}
        for i, th in enumerate(conf.threads):
            if not th.heap.is_complete():
                self.fault(STATE_ILL_TYPED, i, "incomplete heap")
            for oid in th.heap.ids:
                if oid in seen:
                    self.fault(STATE_ILL_TYPED, i, f"object {oid} lives in two threads")
                seen[oid] = i
        # at most one occurrence of each endpoint polarity across the system
        eps = {}
        for i, th in enumerate(conf.threads):
            for c, p in sx.heap_endpoints(th.heap) | sx.endpoints_of(th.expr):
                if (c, p) in eps:
                    self.fault(LINEARITY, i, f"endpoint {c}{p} occurs twice")
                eps[(c, p)] = i

    def _check_heap_agreement(self, i, th, env: ThreadEnv):
        roots = set(th.heap.roots())
        for key, t in list(env.gamma.items()):
            if key[0] != "obj":
                c, p = key[1], key[2]
                sigma = self.theta.get((c, p))
                if sigma is None or not equivalent(translate_channel(sigma), t):
                    self.fault(STATE_ILL_TYPED, i, f"endpoint {c}{p} disagrees with its channel type")
                continue
            oid = key[1]
            if oid not in roots:
                self.fault(STATE_ILL_TYPED, i, f"environment names {oid} which is not a root")
            rec = th.heap.record(oid)
            if isinstance(t, ObjectInternal):
                if rec.cls != t.cls or not self._record_conforms(rec, t.typing, th.heap):
                    self.fault(STATE_ILL_TYPED, i, f"open object {oid} disagrees with its typing")
            elif isinstance(t, SessionType):
                if isinstance(unfold(t), VariantS):
                    self.fault(STATE_ILL_TYPED, i, f"root {oid} tracked at a variant type")
                if not self._value_conforms(sx.ObjIdE(oid), t, th.heap):
                    self.fault(STATE_ILL_TYPED, i, f"object {oid} does not inhabit {render_type(t)}")
            else:
                self.fault(STATE_ILL_TYPED, i, f"environment entry {oid} has value type {t!r}")

    def _check_expression(self, i, th, env: ThreadEnv):
        checker = _InternalChecker(self, dict(env.gamma), list(env.frames), i)
        try:
            checker.infer(th.expr, th.path)
        except CheckError as e:
            self.fault(STATE_ILL_TYPED, i, f"expression re-check failed: {e}")

    def _check_duality(self):
        for (c, p), sigma in self.theta.items():
            if p != "+":
                continue
            other = self.theta.get((c, "-"))
            if other is None:
                continue
            want = dual(sigma)
            if not (subtype_channel(want, other) and subtype_channel(other, want)):
                self.fault(DUALITY, self.theta_owner.get((c, "+"), 0), f"channel {c} endpoints not dual")

    def check_traces(self, conf):
        # every heap object's trace replays from its class's session
        for i, th in enumerate(conf.threads):
            for oid, rec in th.heap.entries:
                try:
                    self._reached_states(oid, rec.cls)
                except TypeErrorTransition as e:
                    self.fault(TRACE_INVALID, i, f"object {oid} ({rec.cls}): {e}")
        # consistency with the tracked environments: a session-typed root's
        # trace must lead to (a subtype of) its tracked state
        for i, th in enumerate(conf.threads):
            env = self.envs[i]
            for key, t in env.gamma.items():
                if key[0] != "obj" or not isinstance(t, SessionType):
                    continue
                tu = unfold(t)
                if isinstance(tu, VariantS):
                    continue  # resolved through the tag holder, checked elsewhere
                if not th.heap.has(key[1]):
                    continue  # cross-thread shape errors are reported by check_state
                rec = th.heap.record(key[1])
                try:
                    reached = self._reached_states(key[1], rec.cls)
                except TypeErrorTransition as e:
                    self.fault(TRACE_INVALID, i, str(e))
                if not any(subtype_session(r, t) for r in reached):
                    self.fault(
                        TRACE_INVALID, i, f"trace of {key[1]} does not reach {render_type(t)}"
                    )


# ---------------------------------------------------------------------------
# The expression checker extended to internal forms
# ---------------------------------------------------------------------------


class _ResolvedLink(LinkField):
    """A tag in flight whose variant has already been resolved by the run:
    behaves as ``link f`` but remembers the actual label and the full variant
    so that parking re-widens the field and switching picks one branch."""

    __slots__ = ("label", "variant")

    def __init__(self, field, label, variant):
        super().__init__(field)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "variant", variant)


class _InternalChecker:
    """Re-derives a typing for an in-flight expression under the tracked
    environment: the expression checker plus object identifiers, endpoints
    and return, with the current path threading through returns."""

    def __init__(self, monitor: Monitor, gamma, frames, thread):
        self.m = monitor
        self.gamma = gamma
        self.frames = frames  # oldest first
        self.thread = thread
        self.depth = 0

    def infer(self, e, path):
        t, path_out = self._infer(e, path)
        return t

    def _obj(self, path):
        t = env_type_at(self.gamma, path)
        if not isinstance(t, ObjectInternal):
            raise CheckError("InternalForm", f"object at {path} is not open")
        return t

    def _get_F(self, path):
        return self._obj(path).typing

    def _set_F(self, path, F):
        env_set_at(self.gamma, path, ObjectInternal(self._obj(path).cls, F))

    def _infer(self, e, path):
        ctx, program = self.m.ctx, self.m.program

        if isinstance(e, sx.NullE):
            return sx.NULL_T, path
        if isinstance(e, sx.AccessE):
            return translate_access(program.access_points[e.name]), path
        if isinstance(e, sx.ObjIdE):
            key = ("obj", e.oid)
            if key not in self.gamma:
                raise CheckError("InternalForm", f"unknown object {e.oid}")
            if path.root == e.oid:
                raise CheckError("InternalForm", f"reference to {e.oid} within itself")
            return self.gamma.pop(key), path
        if isinstance(e, sx.EndpointE):
            key = ("chan", e.chan, e.polarity)
            if key not in self.gamma:
                raise CheckError("InternalForm", f"unknown endpoint {e.chan}{e.polarity}")
            return self.gamma.pop(key), path
        if isinstance(e, sx.VarE):
            raise CheckError("UnboundVariable", f"runtime expression holds variable {e.name!r}")

        if isinstance(e, sx.LabelE):
            F = self._get_F(path)
            if not isinstance(F, RecordF):
                raise CheckError("VariantShapeMismatch", "label under a variant field typing")
            self._set_F(path, VariantF(((e.label, F),)))
            return sx.LINK_THIS, path

        if isinstance(e, sx.NewE):
            return program.cls(e.cls).session, path

        if isinstance(e, sx.SwapE):
            t, path = self._infer(e.expr, path)
            F = self._get_F(path)
            if isinstance(t, LinkThis):
                if not isinstance(F, VariantF):
                    raise CheckError("VariantShapeMismatch", "linkthis without variant")
                from .subtyping import join_records

                labels = sorted(F.labels)
                joined = join_records([r for _, r in F.cases])
                old = joined.get(e.field)
                self._no_variant(old, e.field)
                self._set_F(path, joined.set(e.field, EnumType(frozenset(labels))))
                return old, path
            if not isinstance(F, RecordF):
                raise CheckError("VariantShapeMismatch", "fields hidden behind a variant typing")
            if isinstance(t, _ResolvedLink):
                # parking a resolved tag: widen its field back to the variant
                old = F.get(e.field)
                self._no_variant(old, e.field)
                F = F.set(t.field, t.variant).set(e.field, LinkField(t.field))
                self._set_F(path, F)
                return old, path
            old = F.get(e.field)
            self._no_variant(old, e.field)
            self._set_F(path, F.set(e.field, t))
            return old, path

        if isinstance(e, sx.CallE):
            t, path = self._infer(e.arg, path)
            F = self._get_F(path)
            if isinstance(t, LinkThis):
                from .subtyping import join_records

                labels = F.labels
                F = join_records([r for _, r in F.cases])
                branch = self._branch_of(F.get(e.field))
                entry = None
                for en in branch.named(e.method):
                    if isinstance(en.param, EnumType) and labels <= en.param.labels:
                        entry = en
                        break
                if entry is None:
                    raise CheckError("NoSuchMethod", f"{e.method!r} with labels {set(labels)}")
            else:
                branch = self._branch_of(F.get(e.field))
                entry = resolve_signature(branch, e.method, t)
            result = LinkField(e.field) if isinstance(entry.result, LinkThis) else entry.result
            self._set_F(path, F.set(e.field, entry.cont))
            return result, path

        if isinstance(e, sx.SelfCallE):
            t, path = self._infer(e.arg, path)
            obj = self._obj(path)
            mdef = program.cls(obj.cls).method(e.method)
            if mdef is None or mdef.annotation is None:
                raise CheckError("MissingAnnotation", f"self-call of {e.method!r}")
            ann = mdef.annotation
            F = self._get_F(path)
            if isinstance(t, LinkThis):
                from .subtyping import join_records

                if not isinstance(F, VariantF):
                    raise CheckError("VariantShapeMismatch", "linkthis without variant")
                F = join_records([r for _, r in F.cases])
            elif not subtype_value(t, ann.param_type):
                raise CheckError("ArgumentMismatch", f"argument of {e.method!r}")
            if not subtype_any(F, ann.req):
                raise CheckError("AnnotationMismatch", f"req of {e.method!r} unsatisfied")
            self._set_F(path, ann.ens)
            return ann.result, path

        if isinstance(e, sx.SeqE):
            t, path = self._infer(e.first, path)
            if isinstance(t, LinkField):
                raise CheckError("DiscardedLink", "discarding a tag bound to a field")
            F = self._get_F(path)
            if isinstance(t, LinkThis):
                from .subtyping import join_records

                self._set_F(path, join_records([r for _, r in F.cases]))
            return self._infer(e.second, path)

        if isinstance(e, sx.SwitchE):
            return self._infer_switch(e, path)

        if isinstance(e, sx.WhileE):
            return self._infer_while(e, path)

        if isinstance(e, sx.SpawnE):
            t, path = self._infer(e.arg, path)
            if not isinstance(t, NullType):
                raise CheckError("ArgumentMismatch", "spawn argument must be Null")
            u = unfold(program.cls(e.cls).session)
            if not any(
                en.name == e.method and isinstance(en.param, NullType)
                and isinstance(en.result, NullType)
                for en in u.entries
            ):
                raise CheckError("SpawnUnavailable", f"{e.cls}.{e.method}")
            return sx.NULL_T, path

        if isinstance(e, sx.ReturnE):
            if self.depth >= len(self.frames):
                raise CheckError("InternalForm", "return without a pending call")
            frame = self.frames[self.depth]
            self.depth += 1
            t, path = self._infer(e.expr, path)
            if not path.fields or path.last() != frame.field:
                raise CheckError("InternalForm", "return path mismatch")
            inner = self._obj(path)
            cont_u = unfold(frame.cont)
            if isinstance(t, LinkThis):
                if not isinstance(inner.typing, VariantF):
                    raise CheckError("VariantShapeMismatch", "tag without a variant field typing")
                if isinstance(cont_u, VariantS):
                    for l, rec_f in inner.typing.cases:
                        if l not in cont_u.labels:
                            raise CheckError("VariantShapeMismatch", f"tag {l} outside the variant")
                        self._consistent(inner.cls, cont_u.case(l), rec_f)
                    if len(inner.typing.cases) == 1:
                        # a literal tag: the run has resolved the variant already
                        l0, _ = inner.typing.cases[0]
                        env_set_at(self.gamma, path, cont_u.case(l0))
                        return _ResolvedLink(frame.field, l0, frame.cont), path.parent()
                    env_set_at(self.gamma, path, frame.cont)
                    return LinkField(frame.field), path.parent()
                # enumeration result: the tag is a plain value, fields joined
                from .subtyping import join_records

                joined = join_records([r for _, r in inner.typing.cases])
                self._consistent(inner.cls, frame.cont, joined)
                env_set_at(self.gamma, path, frame.cont)
                return EnumType(inner.typing.labels), path.parent()
            if isinstance(t, LinkField):
                raise CheckError("InternalForm", "returning a tag bound to a field")
            if not isinstance(inner.typing, RecordF):
                raise CheckError("VariantShapeMismatch", "returning with variant fields")
            if isinstance(t, EnumType) and isinstance(cont_u, VariantS):
                # an enumeration-typed body before a variant state: each label
                # leads to the same fields (the uniform variant)
                if not t.labels <= cont_u.labels:
                    raise CheckError("VariantShapeMismatch", "result labels outside the variant")
                for l in sorted(t.labels):
                    self._consistent(inner.cls, cont_u.case(l), inner.typing)
                env_set_at(self.gamma, path, frame.cont)
                return LinkField(frame.field), path.parent()
            self._consistent(inner.cls, frame.cont, inner.typing)
            env_set_at(self.gamma, path, frame.cont)
            return t, path.parent()

        raise CheckError("InternalForm", f"no rule for {type(e).__name__}")

    def _consistent(self, cls_name, session, ftyping):
        hit = self.m._consistency_holds(cls_name, session, ftyping)
        if hit is not True:
            raise CheckError("ConsistencyFailure", hit[1])

    def _no_variant(self, t, f):
        if isinstance(t, SessionType) and isinstance(unfold(t), VariantS):
            raise CheckError("SwapOnVariantField", f"field {f!r} holds a variant type")

    def _branch_of(self, t):
        if not isinstance(t, SessionType):
            raise CheckError("NoSuchMethod", f"call on non-object type {t!r}")
        u = unfold(t)
        if not isinstance(u, Branch):
            raise CheckError("NoSuchMethod", "call on a variant state")
        return u

    def _infer_switch(self, e, path):
        from .subtyping import join_field, join_records, JoinUndefined

        u, path = self._infer(e.subject, path)
        case_labels = e.labels
        outs = []

        def run(labels, f_for):
            for l in labels:
                if l not in case_labels:
                    raise CheckError("SwitchLabelCoverage", f"missing case {l!r}")
                saved_gamma = dict(self.gamma)
                saved_depth = self.depth
                if f_for is not None:
                    self._set_F(path, f_for(l))
                t, p2 = self._infer(e.case(l), path)
                outs.append((t, self._get_F(p2), p2))
                self.gamma = saved_gamma
                self.depth = saved_depth

        F = self._get_F(path)
        if isinstance(u, EnumType):
            run([l for l, _ in e.cases if l in u.labels], None)
        elif isinstance(u, _ResolvedLink):
            # the run already picked the branch; its field is resolved
            run([u.label], None)
        elif isinstance(u, LinkThis):
            if not isinstance(F, VariantF):
                raise CheckError("VariantShapeMismatch", "linkthis without variant")
            joined = join_records([r for _, r in F.cases])
            if not F.labels <= case_labels:
                raise CheckError("SwitchLabelCoverage", "variant labels exceed cases")
            run([l for l, _ in e.cases if l in F.labels], lambda l: joined)
        elif isinstance(u, LinkField):
            target = F.get(u.field)
            tu = unfold(target) if isinstance(target, SessionType) else None
            if not isinstance(tu, VariantS):
                raise CheckError("SwitchShapeMismatch", f"field {u.field!r} not a variant")
            if not tu.labels <= case_labels:
                raise CheckError("SwitchLabelCoverage", "variant labels exceed cases")
            run(
                [l for l, _ in e.cases if l in tu.labels],
                lambda l: F.set(u.field, tu.case(l)),
            )
        else:
            raise CheckError("SwitchShapeMismatch", f"switch on {u!r}")

        types = [t for t, _, _ in outs]
        first = types[0]
        for t in types[1:]:
            if t.canon() != first.canon() and not (
                isinstance(t, SessionType)
                and isinstance(first, SessionType)
                and equivalent(t, first)
            ):
                raise CheckError("SwitchShapeMismatch", "branches disagree on the type")
        try:
            f_out = outs[0][1]
            for _, f, _ in outs[1:]:
                f_out = join_field(f_out, f)
        except JoinUndefined as err:
            raise CheckError("JoinUndefined", str(err)) from None
        self._set_F(outs[0][2], f_out)
        return first, outs[0][2]

    def _infer_while(self, e, path):
        """The loop clause, stabilized by widening.

        A tracked entry typing can be finer than the loop's recurrent typing
        (actual values narrow enumerations); declaratively the entry is
        weakened before the loop rule applies. Search for a stable typing
        above the entry by re-running the condition and body from the widened
        candidate, a bounded number of times.
        """
        from .subtyping import JoinUndefined, join_field, join_records

        bool_labels = frozenset({"TRUE", "FALSE"})
        F_entry = self._get_F(path)
        last_err = None
        candidate = F_entry
        for _ in range(5):
            saved_gamma = dict(self.gamma)
            saved_depth = self.depth
            try:
                exit_f, fb = self._try_loop(e, path, candidate, bool_labels)
            except CheckError as err:
                self.gamma = saved_gamma
                self.depth = saved_depth
                raise
            self.gamma = saved_gamma
            self.depth = saved_depth
            if fb is None:  # stable at this candidate
                self._set_F(path, exit_f)
                return sx.NULL_T, path
            last_err = CheckError(
                "LoopInvariantMismatch", "loop body does not restore entry"
            )
            if not subtype_any(candidate, fb):
                break
            try:
                candidate = join_field(candidate, fb)
            except JoinUndefined:
                break
        raise last_err or CheckError("LoopInvariantMismatch", "loop does not stabilize")

    def _try_loop(self, e, path, F_star, bool_labels):
        """One widening attempt: returns (exit typing, None) when the body
        restores F_star, or (None, body output) for the next candidate."""
        from .subtyping import join_records

        self._set_F(path, F_star)
        u, _ = self._infer(e.cond, path)
        F1 = self._get_F(path)
        if isinstance(u, EnumType):
            if not u.labels <= bool_labels:
                raise CheckError("SwitchShapeMismatch", "loop condition not boolean")
            f_body, exit_f = F1, F1
        elif isinstance(u, LinkThis):
            if not isinstance(F1, VariantF) or not F1.labels <= bool_labels:
                raise CheckError("SwitchShapeMismatch", "loop condition not boolean")
            joined = join_records([r for _, r in F1.cases])
            f_body, exit_f = joined, joined
        elif isinstance(u, LinkField):
            target = F1.get(u.field)
            tu = unfold(target) if isinstance(target, SessionType) else None
            if not isinstance(tu, VariantS) or tu.labels != bool_labels:
                raise CheckError("SwitchShapeMismatch", "loop condition field not TRUE/FALSE")
            f_body = F1.set(u.field, tu.case("TRUE"))
            exit_f = F1.set(u.field, tu.case("FALSE"))
        else:
            raise CheckError("SwitchShapeMismatch", f"loop on {u!r}")

        self._set_F(path, f_body)
        t, _ = self._infer(e.body, path)
        fb = self._get_F(path)
        if isinstance(t, LinkThis) and isinstance(fb, VariantF):
            fb = join_records([r for _, r in fb.cases])
            t = sx.NULL_T
        if not isinstance(t, NullType):
            raise CheckError("LoopInvariantMismatch", "loop body must have type Null")
        if equivalent(fb, F_star):
            return exit_f, None
        return None, fb
