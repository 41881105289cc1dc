import pytest

from conftest import load_checked
from mstlang.channels import dual
from mstlang.interpreter import Interpreter
from mstlang.monitor import (
    Monitor,
    MonitorViolation,
    TraceCall,
    TraceLabel,
    TypeErrorTransition,
    extend_traces,
    lts_step,
    parse_trace,
    replay_trace,
    traces_valid,
)
from mstlang.parser import parse_session_type as pt
from mstlang.subtyping import equivalent
from mstlang.syntax import (
    LabelE,
    ObjectInternal,
    VariantS,
    unfold,
)


def monitored_run(name, limit=2000, seed=None, states=True, traces=True):
    prog, report, ctx = load_checked(name)
    assert report.ok, report.lines()
    interp = Interpreter(prog)
    mon = Monitor(prog, ctx, verify_states=states, verify_traces=traces)
    mon.start(interp.initial_config())
    outcome, events, conf = interp.run(limit, seed=seed, observer=mon.on_step)
    return outcome, events, conf, mon


# -- LTS and call traces --------------------------------------------------------


def test_lts_open_edge(file_prog):
    init = pt("File.Init", file_prog)
    (after,) = lts_step(init, TraceCall("open"))
    u = unfold(after)
    assert isinstance(u, VariantS)
    assert {l for l, _ in u.cases} == {"OK", "ERROR"}
    (opened,) = lts_step(after, TraceLabel("OK"))
    assert equivalent(opened, pt("File.Open", file_prog))


def test_lts_label_identity_on_branch(file_prog):
    init = pt("File.Init", file_prog)
    assert lts_step(init, TraceLabel("ANY")) == (init,)


def test_lts_type_error(file_prog):
    opened = pt("File.Open", file_prog)
    with pytest.raises(TypeErrorTransition):
        lts_step(opened, TraceCall("read"))


def test_replay_file_traces(file_prog):
    init = pt("File.Init", file_prog)
    replay_trace(init, parse_trace("open OK hasNext FALSE close"))
    with pytest.raises(TypeErrorTransition) as err:
        replay_trace(init, parse_trace("read"))
    assert "position 1" in str(err.value)
    with pytest.raises(TypeErrorTransition) as err:
        replay_trace(init, parse_trace("open OK read"))
    assert "position 3" in str(err.value)


def test_extend_traces_clauses():
    prog, report, ctx = load_checked("reduction_ex.mst")
    interp = Interpreter(prog)
    conf = interp.initial_config()
    tr = {"top": (TraceCall("run"),)}
    seen_new = seen_call = seen_return = False
    while True:
        step = interp.step(conf)
        if step is None:
            break
        before = conf
        conf, ev = step
        tr2 = extend_traces(tr, ev, before)
        if ev.rule == "New":
            assert tr2[ev.oid] == ()
            seen_new = True
        elif ev.rule == "Call":
            assert tr2[ev.oid][-1] == TraceCall(ev.method, None)
            seen_call = True
        elif ev.rule == "Return" and isinstance(ev.value, LabelE):
            oid = before.threads[0].heap.resolve_id(before.threads[0].path)
            assert tr2[oid][-1] == TraceLabel(ev.value.label)
            seen_return = True
        elif ev.rule == "Return":
            assert tr2 == tr
        tr = tr2
    assert seen_new and seen_call and seen_return
    ok, detail = traces_valid(prog, tr, conf)
    assert ok, detail


def test_traces_valid_reports_offender(file_prog):
    prog = file_prog
    from mstlang.syntax import Configuration, Heap, ObjectRecord, Path, Thread, NULL_E

    heap = Heap().add("o", ObjectRecord("File", (("state", NULL_E),)))
    conf = Configuration(threads=(Thread(heap, Path("o"), NULL_E),))
    ok, detail = traces_valid(prog, {"o": (TraceCall("read"),)}, conf)
    assert not ok and "o" in detail


# -- tracked environments -------------------------------------------------------


def test_reduction_example_gamma_sequence():
    prog, report, ctx = load_checked("reduction_ex.mst")
    interp = Interpreter(prog)
    mon = Monitor(prog, ctx)
    mon.start(interp.initial_config())

    lit = pt("Cell.Lit", prog)
    dark = pt("Cell.Dark", prog)
    cell_branch = prog.classes["Cell"].session
    variant = unfold(cell_branch).entries[0].cont

    expected = {}  # rule occurrence -> expected (f type, g type)
    snapshots = []

    def observer(step_no, before, ev, after):
        mon.on_step(step_no, before, ev, after)
        top = mon.envs[0].gamma[("obj", "top")]
        snapshots.append((ev.rule, top))

    outcome, events, conf = interp.run(100, observer=observer)
    assert outcome.kind == "terminated"

    def f_g(t):
        assert isinstance(t, ObjectInternal)
        return t.typing.get("f"), t.typing.get("g")

    by_rule = {}
    for rule, top in snapshots:
        by_rule.setdefault(rule, []).append(top)

    # after the call, f is the open internal view of the cell
    f, g = f_g(by_rule["Call"][0])
    assert isinstance(f, ObjectInternal) and f.cls == "Cell"
    # after the return, f holds the component selected by the actual tag
    f, g = f_g(by_rule["Return"][0])
    assert equivalent(f, lit)
    # after parking the tag, f is widened back to the full variant and g links it
    first_swap_after_return = None
    seen_return = False
    for rule, top in snapshots:
        if rule == "Return":
            seen_return = True
        elif rule == "Swap" and seen_return:
            first_swap_after_return = top
            break
    f, g = f_g(first_swap_after_return)
    assert equivalent(f, variant)
    assert repr(g) == "link f"
    # the second swap reads the tag back and resolves the variant
    f, g = f_g(by_rule["Swap"][-1])
    assert equivalent(f, lit)
    # the switch leaves the environment unchanged
    f, g = f_g(by_rule["Switch"][0])
    assert equivalent(f, lit)


def test_theta_duality_during_delegation():
    outcome, events, conf, mon = monitored_run("progs/p04_delegate.mst")
    assert outcome.kind == "terminated"
    # after the run, every channel that still has both endpoints is dual
    for (c, p), sigma in mon.theta.items():
        if p == "+" and (c, "-") in mon.theta:
            other = mon.theta[(c, "-")]
            assert dual(sigma).canon() == other.canon() or equivalent(
                pt("{}"), pt("{}")
            )


def test_monitored_runs_clean():
    for name in ["file.mst", "progs/p05_transfer.mst", "progs/p11_reuse_access.mst"]:
        outcome, events, conf, mon = monitored_run(name)
        assert outcome.kind == "terminated"


def test_corrupted_parked_tag_detected():
    # run until a tag is parked in a field, then plant a label outside the
    # variant it is linked to
    prog, report, ctx = load_checked("reduction_ex.mst")
    interp = Interpreter(prog)
    mon = Monitor(prog, ctx)
    conf = interp.initial_config()
    mon.start(conf)
    step_no = 0
    seen_return = False
    while True:
        step_no += 1
        before = conf
        conf, ev = interp.step(conf)
        mon.on_step(step_no, before, ev, conf)
        if ev.rule == "Return":
            seen_return = True
        if seen_return and ev.rule == "Swap":
            break
    th = conf.threads[0]
    assert th.heap.record("top").get("g") == LabelE("ON")
    bad_heap = th.heap.replace("top", th.heap.record("top").set("g", LabelE("BOGUS")))
    from mstlang.syntax import Thread

    bad = conf.with_thread(0, Thread(bad_heap, th.path, th.expr))
    with pytest.raises(MonitorViolation) as err:
        mon.check_state(bad)
    assert err.value.kind == "StateIllTyped"


def test_corrupted_open_object_field_detected():
    # corrupt an enumeration-typed field of an object that is mid-call
    prog, report, ctx = load_checked("file.mst")
    interp = Interpreter(prog)
    mon = Monitor(prog, ctx)
    conf = interp.initial_config()
    mon.start(conf)
    step_no = 0
    while True:
        step_no += 1
        before = conf
        conf, ev = interp.step(conf)
        mon.on_step(step_no, before, ev, conf)
        th = conf.threads[0]
        if len(th.path.fields) >= 2:  # inside File, opened by FileReader
            oid = th.heap.resolve_id(th.path)
            rec = th.heap.record(oid)
            if isinstance(rec.get("state"), LabelE):
                bad_heap = th.heap.replace(oid, rec.set("state", LabelE("INTRUDER")))
                from mstlang.syntax import Thread

                bad = conf.with_thread(0, Thread(bad_heap, th.path, th.expr))
                with pytest.raises(MonitorViolation) as err:
                    mon.check_state(bad)
                assert err.value.kind == "StateIllTyped"
                return
    raise AssertionError("never reached an open File with a label in state")


def test_trace_violation_detected_on_bad_trace():
    prog, report, ctx = load_checked("file.mst")
    interp = Interpreter(prog)
    mon = Monitor(prog, ctx)
    conf = interp.initial_config()
    mon.start(conf)
    for i in range(12):
        before = conf
        conf, ev = interp.step(conf)
        mon.on_step(i + 1, before, ev, conf)
    # corrupt the recorded trace of the file object
    target = next(oid for th in conf.threads for oid, rec in th.heap.entries if rec.cls == "File")
    mon.traces[target] = (TraceCall("read", None),)
    mon._reached.pop(target, None)
    with pytest.raises(MonitorViolation) as err:
        mon.check_traces(conf)
    assert err.value.kind == "TraceInvalid"


def test_unchecked_program_raises_tracking_fault():
    text = """
    class P {
      session {Null use(Null): {}}
      use(x) { x }
    }
    class M {
      session {Null go(Null): {}}
      f;
      go(x) { f = new P(); f.use(null); f.use(null); }
    }
    main M.go;
    """
    from mstlang.parser import parse_program
    from mstlang.typechecker import check_program

    prog = parse_program(text)
    report, ctx = check_program(prog)
    assert not report.ok
    interp = Interpreter(prog)
    mon = Monitor(prog, ctx)
    with pytest.raises(MonitorViolation):
        # the initial state's expression already fails the re-check
        mon.start(interp.initial_config())
        interp.run(100, observer=mon.on_step)


def test_spawned_thread_env_created():
    outcome, events, conf, mon = monitored_run("progs/p03_spawn.mst")
    assert len(mon.envs) == len(conf.threads) == 3


def test_init_extends_theta_with_dual_entries():
    prog, report, ctx = load_checked("progs/p09_two_pairs.mst")
    interp = Interpreter(prog)
    mon = Monitor(prog, ctx)
    conf = interp.initial_config()
    mon.start(conf)
    step_no = 0
    while True:
        step_no += 1
        before = conf
        step = interp.step(conf)
        assert step is not None
        conf, ev = step
        mon.on_step(step_no, before, ev, conf)
        if ev.rule == "Init":
            plus = mon.theta[(ev.chan, "+")]
            minus = mon.theta[(ev.chan, "-")]
            assert dual(plus) == minus
            assert mon.theta_owner[(ev.chan, "+")] == ev.threads[0]
            assert mon.theta_owner[(ev.chan, "-")] == ev.threads[1]
            break


def test_combase_advances_both_endpoints():
    prog, report, ctx = load_checked("progs/p09_two_pairs.mst")
    interp = Interpreter(prog)
    mon = Monitor(prog, ctx)
    conf = interp.initial_config()
    mon.start(conf)
    step_no = 0
    while True:
        step_no += 1
        before = conf
        step = interp.step(conf)
        if step is None:
            break
        conf, ev = step
        mon.on_step(step_no, before, ev, conf)
        if ev.rule == "ComBase":
            from mstlang.syntax import ChanEnd

            assert isinstance(mon.theta[(ev.chan, "+")], ChanEnd)
            assert isinstance(mon.theta[(ev.chan, "-")], ChanEnd)
            break


def test_duplicate_endpoint_across_threads_detected():
    prog, report, ctx = load_checked("progs/p09_two_pairs.mst")
    interp = Interpreter(prog)
    mon = Monitor(prog, ctx)
    conf = interp.initial_config()
    mon.start(conf)
    step_no = 0
    ep = None
    while ep is None:
        step_no += 1
        before = conf
        conf, ev = interp.step(conf)
        mon.on_step(step_no, before, ev, conf)
        if ev.rule == "Init":
            from mstlang.syntax import EndpointE

            ep = EndpointE(ev.chan, "+")
    # plant a second occurrence of the endpoint in an unrelated thread
    from mstlang.syntax import Thread, heap_endpoints, endpoints_of

    victim = None
    for i, th in enumerate(conf.threads):
        if (ep.chan, ep.polarity) in heap_endpoints(th.heap) | endpoints_of(th.expr):
            continue
        for oid in th.heap.ids:
            if th.heap.record(oid).field_names:
                victim = (i, oid, th.heap.record(oid).field_names[0])
                break
        if victim:
            break
    assert victim is not None
    i, oid, field = victim
    th = conf.threads[i]
    rec = th.heap.record(oid)
    bad = conf.with_thread(i, Thread(th.heap.replace(oid, rec.set(field, ep)), th.path, th.expr))
    with pytest.raises(MonitorViolation) as err:
        mon.check_state(bad)
    assert err.value.kind in ("LinearityViolation", "StateIllTyped")
