import numpy as np
import pytest

from agents.client import create_client
from agents.server import init_server
from core.neural import DenseLayer, ModelParams
from flows.baseline_flow import fedavg_aggregate, run_centralized, run_fedavg, run_single_device
from flows.metrics import GLOBAL, MetricsLog
from flows.protocol_flow import ProtocolFlow, evaluate_global, run_protocol
from tools.partitioning import FederatedData
from utils.errors import DivergenceError


def _interactions(log: MetricsLog):
    return [int(r.value) for r in log.select("interactions", GLOBAL)]


def test_metrics_log_rejects_time_going_backwards():
    log = MetricsLog("protocol", 1)
    log.record(2.0, 1, GLOBAL, "accuracy", 0.5)
    with pytest.raises(ValueError):
        log.record(1.0, 1, GLOBAL, "accuracy", 0.6)
    assert list(log.to_frame().columns) == ["event_time", "round", "entity", "metric", "value"]


def test_evaluate_global_with_identical_clients(small_cfg, small_data):
    server = init_server(small_cfg.train, small_data.num_classes, seed=3)
    clients = {cd.client_id: create_client(cd.client_id, cd, server.classifier, small_cfg.train, init_seed=1)
               for cd in small_data.clients}
    accuracy, per_client = evaluate_global(server, clients, small_data.testset)
    assert set(per_client) == {0, 1, 2}
    assert all(v == pytest.approx(accuracy) for v in per_client.values())


def test_sync_protocol_runs_every_client_each_round(small_cfg, small_data):
    log = run_protocol(small_cfg, small_cfg.schedule, small_data, small_cfg.seed)
    assert not log.aborted
    assert log.rounds_completed() == 2
    assert _interactions(log) == [3, 6]
    assert log.summary["interactions"] == {"0": 2, "1": 2, "2": 2}
    assert log.summary["gate"]["learned"] + log.summary["gate"]["skipped"] == 6 * small_data.num_classes
    assert log.final_state.table.initialized_classes() == [0, 1, 2]
    assert log.select("knowledge_w2") and log.select("table_trace")
    times = [r.event_time for r in log.records]
    assert times == sorted(times)


def test_protocol_runs_are_deterministic(small_cfg, small_data):
    first = run_protocol(small_cfg, small_cfg.schedule, small_data, 5).to_frame()
    second = run_protocol(small_cfg, small_cfg.schedule, small_data, 5).to_frame()
    assert first.equals(second)


def test_async_with_equal_latencies_matches_sync_exactly(make_config, small_data):
    sync = make_config()
    asynchronous = make_config(schedule={"mode": "async", "rounds": 2, "latency_jitter": 0.0})
    sync_log = run_protocol(sync, sync.schedule, small_data, 5)
    async_log = run_protocol(asynchronous, asynchronous.schedule, small_data, 5)
    assert async_log.accuracy_curve() == sync_log.accuracy_curve()
    assert async_log.client_accuracy() == sync_log.client_accuracy()
    assert async_log.final_state.classifier.equals(sync_log.final_state.classifier)


def test_async_with_heterogeneous_latencies_closes_rounds(make_config, small_data):
    cfg = make_config(schedule={"mode": "async", "rounds": 2, "latency_jitter": 2.0})
    log = run_protocol(cfg, cfg.schedule, small_data, 5)
    assert log.rounds_completed() == 2
    assert all(int(v) >= 2 for v in log.summary["interactions"].values())
    times = [r.event_time for r in log.records]
    assert times == sorted(times)


def test_async_clients_always_train_against_a_broadcast_that_includes_their_last_reply(make_config, small_data):
    cfg = make_config(schedule={"mode": "async", "rounds": 3, "latency_jitter": 2.0})
    flow = ProtocolFlow(cfg, cfg.schedule, small_data, 5)
    replied_at, trained = {}, []
    train, integrate = flow._train, flow._integrate

    def recording_train(client_id, timestamp):
        trained.append((client_id, flow.interactions, replied_at.get(client_id, 0)))
        return train(client_id, timestamp)

    def recording_integrate(upload, interaction_count):
        integrate(upload, interaction_count)
        replied_at[upload.client_id] = flow.interactions

    flow._train, flow._integrate = recording_train, recording_integrate
    log = flow.run()
    assert log.rounds_completed() == 3
    assert len(trained) > len(small_data.clients)
    assert all(seen >= own for _, seen, own in trained)
    assert all(own > 0 for _, _, own in trained[len(small_data.clients):])


def test_active_client_interacts_multiple_times_per_round(make_config, small_data):
    cfg = make_config(schedule={"rounds": 2, "active_clients": [1], "interactions_per_round": 3})
    log = run_protocol(cfg, cfg.schedule, small_data, 5)
    assert log.summary["interactions"] == {"0": 2, "1": 6, "2": 2}


def test_random_mode_closes_rounds_after_fixed_interaction_counts(make_config, small_data):
    cfg = make_config(schedule={"mode": "random", "rounds": 3, "random_interactions": 4})
    log = run_protocol(cfg, cfg.schedule, small_data, 5)
    assert _interactions(log) == [4, 8, 12]
    assert sum(log.summary["interactions"].values()) == 12


def test_sync_stragglers_arrive_one_round_late_and_expire_at_the_horizon(make_config, small_data):
    cfg = make_config(schedule={"rounds": 2, "straggler_fraction": 0.5})
    log = run_protocol(cfg, cfg.schedule, small_data, 5)
    # one straggler per round: round 1 integrates 2, round 2 adds the late one plus 2 on time
    assert _interactions(log) == [2, 5]
    assert log.summary["interactions"] == {"0": 2, "1": 2, "2": 2}


def test_protocol_abort_keeps_the_partial_log(small_cfg, small_data, monkeypatch):
    calls = {"n": 0}
    import flows.protocol_flow as protocol_flow
    real = protocol_flow.integrate_upload

    def failing(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 3:
            raise DivergenceError("classifier diverged: non-finite gradient")
        return real(*args, **kwargs)

    monkeypatch.setattr(protocol_flow, "integrate_upload", failing)
    log = run_protocol(small_cfg, small_cfg.schedule, small_data, 5)
    assert log.aborted
    assert log.rounds_completed() == 1
    assert log.summary["aborted"] is True
    assert "diverged" in log.summary["error"]


def _constant(value: float) -> ModelParams:
    return ModelParams(layers=(DenseLayer(np.full((2, 3), value), np.full(2, value)),), role="encoder")


def test_fedavg_aggregate_arithmetic():
    chains = [(_constant(0.0), _constant(0.0)), (_constant(2.0), _constant(2.0))]
    encoder, classifier = fedavg_aggregate(chains, [50, 50])
    for array in encoder.arrays() + classifier.arrays():
        np.testing.assert_allclose(array, 1.0)
    single = fedavg_aggregate(chains[1:], [7])
    assert single[0].equals(chains[1][0])


def test_fedavg_drops_stragglers_from_the_average(make_config):
    cfg = make_config(partition={"clients": 4, "n_local": 20}, schedule={"rounds": 2, "straggler_fraction": 0.5})
    from tools.partitioning import build_federated_data
    log = run_fedavg(cfg, cfg.schedule, build_federated_data(cfg), 5)
    assert [r.value for r in log.select("participants")] == [2.0, 2.0]
    assert log.rounds_completed() == 2
    assert sum(log.summary["interactions"].values()) == 4


def test_fedavg_requires_the_synchronous_schedule(make_config, small_data):
    cfg = make_config(schedule={"mode": "async"})
    with pytest.raises(ValueError):
        run_fedavg(cfg, cfg.schedule, small_data, 5)


def test_single_device_equals_one_client_protocol_without_gating(small_cfg, small_data):
    alone = FederatedData(clients=(small_data.clients[0],), testset=small_data.testset)
    single = run_single_device(small_cfg, alone, 5)
    ungated = small_cfg.train.model_copy(update={"gating": False})
    protocol = run_protocol(small_cfg, small_cfg.schedule, alone, 5, train=ungated)
    assert single.accuracy_curve() == protocol.accuracy_curve()
    assert single.runner == "single"


def test_single_device_reports_every_client(small_cfg, small_data):
    first = run_single_device(small_cfg, small_data, 5)
    second = run_single_device(small_cfg, small_data, 5)
    assert set(first.client_accuracy()) == {0, 1, 2}
    assert first.to_frame().equals(second.to_frame())


def test_centralized_baseline_learns_the_pooled_data(make_config, small_data):
    cfg = make_config(schedule={"rounds": 4}, train={"local_epochs": 3})
    log = run_centralized(cfg, small_data, 5)
    assert log.rounds_completed() == 4
    assert log.accuracy_curve()[-1] >= 0.75
    assert log.summary["rounds_to_target"] is not None
