"""Shared builders for the test suite: tiny DAGs and a bare scheduler rig."""
from dagsched.cluster import Sandbox, SandboxState, Worker, transition
from dagsched.engine import Engine
from dagsched.model import DagRequest, DagSpec, FunctionSpec
from dagsched.sandboxes import SandboxManager
from dagsched.sgs import SemiGlobalScheduler

MS = 1_000


def fn(fn_id, exec_us=100_000, memory_mb=128, setup_us=200_000, preds=()):
    return FunctionSpec(
        fn_id=fn_id,
        exec_time_us=exec_us,
        memory_mb=memory_mb,
        setup_overhead_us=setup_us,
        predecessors=frozenset(preds),
    )


def single_dag(dag_id="app", exec_us=100_000, deadline_us=500_000,
               memory_mb=128, setup_us=200_000):
    return DagSpec(
        dag_id=dag_id,
        functions=(fn("f0", exec_us, memory_mb, setup_us),),
        deadline_us=deadline_us,
    )


def chain_dag(dag_id, execs_us, deadline_us, setup_us=200_000, memory_mb=128):
    fns = []
    for i, e in enumerate(execs_us):
        preds = () if i == 0 else (f"f{i - 1}",)
        fns.append(fn(f"f{i}", e, memory_mb, setup_us, preds))
    return DagSpec(dag_id=dag_id, functions=tuple(fns), deadline_us=deadline_us)


def make_workers(n=2, cores=4, pool_mb=4096, sgs_id=0, first_id=0):
    return [Worker(first_id + i, sgs_id, cores, pool_mb) for i in range(n)]


def make_rig(num_workers=2, cores=4, pool_mb=4096, placement="even", eviction="fair",
             seed=0, interval_us=100_000, overhead_us=0, window_len=50, tracing=False):
    """Engine + workers + manager + semi-global scheduler, ready to poke at."""
    engine = Engine(master_seed=seed, tracing=tracing)
    workers = make_workers(num_workers, cores, pool_mb)
    manager = SandboxManager(
        0, workers, engine, interval_us=interval_us,
        placement=placement, eviction=eviction,
    )
    scheduler = SemiGlobalScheduler(
        0, workers, engine, manager,
        decision_overhead_us=overhead_us, window_len=window_len,
    )
    return engine, workers, manager, scheduler


def warm_sandbox(worker, fn_key, engine, memory_mb=128, sandbox_id=None, now_us=0):
    """Drop an idle warm sandbox straight onto a worker."""
    if sandbox_id is None:
        sandbox_id = 9000 + sum(len(b) for b in worker.sandboxes.values())
    sb = Sandbox(sandbox_id, fn_key, worker.worker_id, memory_mb, now_us)
    worker.add_sandbox(sb)
    transition(sb, SandboxState.IDLE, engine)
    return sb


def request(dag, req_id, arrival_us=0):
    return DagRequest(req_id=req_id, dag=dag, arrival_time_us=arrival_us)
