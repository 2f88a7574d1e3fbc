"""
Knowledge-sharing protocol flow
Runs clients and server under synchronous, asynchronous and random-interaction schedules,
evaluating and logging after every communication round
"""
import heapq
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from agents.client import ClientState, ClientUpload, create_client, client_update, local_accuracy
from agents.server import ServerState, broadcast, init_server, integrate_upload
from config import ScheduleConfig, SimConfig, TrainConfig
from core.linalg_gaussian import bures_w2_sq, collaborative_value
from flows.metrics import GLOBAL, MetricsLog, class_entity, client_entity, gate_statistics
from tools.datasets import Dataset
from tools.partitioning import FederatedData
from utils.errors import CogShareError
from utils.patterns import derive_seed, make_rng

logger = logging.getLogger(__name__)


def evaluate_global(server: ServerState, clients: Dict[int, ClientState],
                    testset: Dataset) -> Tuple[float, Dict[int, float]]:
    """Per-client accuracy with the central classifier substituted; global is their unweighted mean"""
    per_client = {k: local_accuracy(state, testset, classifier=server.classifier)
                  for k, state in sorted(clients.items())}
    return float(np.mean(list(per_client.values()))), per_client


def draw_stragglers(seed: int, num_clients: int, fraction: float, *keys) -> List[int]:
    """floor(fraction * K) distinct client ids"""
    count = int(np.floor(fraction * num_clients))
    if count == 0:
        return []
    rng = make_rng(seed, "stragglers", *keys)
    return sorted(int(k) for k in rng.choice(num_clients, size=count, replace=False))


class ProtocolFlow:
    """
    One run of the knowledge-sharing protocol
    The server is the serialization point: uploads are integrated one at a time in event order
    """

    def __init__(self, cfg: SimConfig, schedule: ScheduleConfig, data: FederatedData, seed: int,
                 train: Optional[TrainConfig] = None, runner: str = "protocol"):
        self.cfg = cfg
        self.schedule = schedule
        self.data = data
        self.seed = seed
        self.train = train or cfg.train
        self.server = init_server(self.train, data.num_classes, seed)
        init_seed = derive_seed(seed, "client_init")
        self.clients: Dict[int, ClientState] = {
            cd.client_id: create_client(cd.client_id, cd, self.server.classifier, self.train, init_seed)
            for cd in data.clients
        }
        self.log = MetricsLog(runner, seed)
        self.round = 0
        self.interactions = 0
        self._gate_mark = 0

    def _multiplier(self, client_id: int) -> int:
        if client_id in self.schedule.active_clients:
            return self.schedule.interactions_per_round
        return 1

    def _train(self, client_id: int, timestamp: float) -> Tuple[ClientState, ClientUpload]:
        state = self.clients[client_id]
        seed = derive_seed(self.seed, "client", client_id, state.interaction_count)
        return client_update(state, broadcast(self.server), self.train, seed, timestamp=timestamp)

    def _integrate(self, upload: ClientUpload, interaction_count: int) -> None:
        seed = derive_seed(self.seed, "server", upload.client_id, interaction_count)
        self.server = integrate_upload(self.server, upload, self.train, seed, n_gen=self.cfg.n_gen)
        self.interactions += 1

    def _interact_now(self, client_id: int, timestamp: float) -> None:
        state, upload = self._train(client_id, timestamp)
        self.clients[client_id] = state
        self._integrate(upload, state.interaction_count)

    def _close_round(self, event_time: float) -> None:
        self.round += 1
        accuracy, per_client = evaluate_global(self.server, self.clients, self.data.testset)
        log, r = self.log, self.round
        log.record(event_time, r, GLOBAL, "accuracy", accuracy)
        for k, acc in per_client.items():
            log.record(event_time, r, client_entity(k), "accuracy", acc)

        new_records = self.server.gate_log[self._gate_mark:]
        self._gate_mark = len(self.server.gate_log)
        log.record(event_time, r, GLOBAL, "gate_learned", sum(rec.learned for rec in new_records))
        log.record(event_time, r, GLOBAL, "gate_skipped", sum(not rec.learned for rec in new_records))
        log.record(event_time, r, GLOBAL, "gate_takeovers", sum(rec.takeover for rec in new_records))
        log.record(event_time, r, GLOBAL, "interactions", self.interactions)

        table = self.server.table
        for k, state in sorted(self.clients.items()):
            pairs = [(local, table.usable(c)) for c, local in sorted(state.local_class_knowledge.items())
                     if table.usable(c) is not None]
            if pairs:
                log.record(event_time, r, client_entity(k), "knowledge_col",
                           float(np.mean([collaborative_value(a, b) for a, b in pairs])))
                log.record(event_time, r, client_entity(k), "knowledge_w2",
                           float(np.mean([bures_w2_sq(a, b) for a, b in pairs])))
        for c in table.initialized_classes():
            log.record(event_time, r, class_entity(c), "table_trace", table.entries[c].trace)
        logger.info("Round %d closed at t=%.3f: global accuracy %.4f", r, event_time, accuracy)

    def _run_sync(self) -> None:
        pending: List[Tuple[ClientUpload, int]] = []
        num_clients = len(self.clients)
        for r in range(1, self.schedule.rounds + 1):
            late = draw_stragglers(self.seed, num_clients, self.schedule.straggler_fraction, r)
            ids = sorted(self.clients)
            delayed = {ids[i] for i in late}
            outbound = broadcast(self.server)
            results = {}
            for k in ids:
                state = self.clients[k]
                seed = derive_seed(self.seed, "client", k, state.interaction_count)
                results[k] = client_update(state, outbound, self.train, seed, timestamp=float(r))

            for upload, count in pending:
                self._integrate(upload, count)
            pending = []
            for k in ids:
                state, upload = results[k]
                self.clients[k] = state
                if k in delayed:
                    pending.append((upload, state.interaction_count))
                else:
                    self._integrate(upload, state.interaction_count)
            for k in ids:
                for _ in range(self._multiplier(k) - 1):
                    self._interact_now(k, float(r))
            self._close_round(float(r))
        if pending:
            logger.info("Dropped %d straggler uploads still pending at the horizon", len(pending))

    def _latencies(self) -> Dict[int, float]:
        rng = make_rng(self.seed, "latency")
        ids = sorted(self.clients)
        jitter = rng.random(len(ids))
        late = set(draw_stragglers(self.seed, len(ids), self.schedule.straggler_fraction, "async"))
        latencies = {}
        for i, k in enumerate(ids):
            latency = self.schedule.base_latency * (1.0 + self.schedule.latency_jitter * jitter[i])
            if i in late:
                latency += self.schedule.straggler_delay
            latencies[k] = latency / self._multiplier(k)
        return latencies

    def _run_async(self) -> None:
        latencies = self._latencies()
        queue: List[Tuple[float, int]] = []
        in_flight: Dict[int, Tuple[ClientState, ClientUpload]] = {}

        def depart(client_id: int, now: float) -> None:
            arrival = now + latencies[client_id]
            in_flight[client_id] = self._train(client_id, arrival)
            heapq.heappush(queue, (arrival, client_id))

        for k in sorted(self.clients):
            depart(k, 0.0)
        since_close = set()
        while queue and self.round < self.schedule.rounds:
            now = queue[0][0]
            arrived = []
            while queue and queue[0][0] == now:
                arrived.append(heapq.heappop(queue)[1])
            for k in arrived:
                state, upload = in_flight.pop(k)
                self.clients[k] = state
                self._integrate(upload, state.interaction_count)
                since_close.add(k)
            if len(since_close) == len(self.clients):
                self._close_round(now)
                since_close = set()
                if self.round >= self.schedule.rounds:
                    break
            for k in arrived:
                depart(k, now)

    def _run_random(self) -> None:
        rng = make_rng(self.seed, "random_schedule")
        ids = sorted(self.clients)
        weights = np.array([self._multiplier(k) for k in ids], dtype=float)
        weights /= weights.sum()
        for _ in range(self.schedule.rounds):
            for _ in range(self.schedule.random_interactions):
                k = ids[int(rng.choice(len(ids), p=weights))]
                self._interact_now(k, float(self.interactions + 1))
            self._close_round(float(self.interactions))

    def run(self) -> MetricsLog:
        logger.info("Starting %s run: %d clients, %s schedule, %d rounds",
                    self.log.runner, len(self.clients), self.schedule.mode, self.schedule.rounds)
        try:
            if self.schedule.mode == "sync":
                self._run_sync()
            elif self.schedule.mode == "async":
                self._run_async()
            else:
                self._run_random()
        except (CogShareError, FloatingPointError) as err:
            self.log.abort(str(err))
        self.log.final_state = self.server
        self.log.finalize(
            self.cfg.target_accuracy,
            unreliable=self.data.unreliable,
            gate=gate_statistics(self.server.gate_log, self.server.rejections),
            interactions={k: s.interaction_count for k, s in self.clients.items()},
        )
        return self.log


def run_protocol(cfg: SimConfig, schedule: ScheduleConfig, data: FederatedData, seed: int,
                 train: Optional[TrainConfig] = None) -> MetricsLog:
    """Run the knowledge-sharing protocol and return its metrics log"""
    return ProtocolFlow(cfg, schedule, data, seed, train=train).run()
