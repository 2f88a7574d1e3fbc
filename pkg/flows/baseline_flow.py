"""
Baseline runners: FedAvg model averaging, isolated single-device training and centralized training
"""
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np

from config import ScheduleConfig, SimConfig, TrainConfig
from core.neural import (
    ModelParams,
    average_params,
    backward,
    build_classifier,
    build_encoder,
    clip_grads,
    forward,
    predict,
    sgd_step,
    softmax_ce,
)
from flows.metrics import GLOBAL, MetricsLog, client_entity
from flows.protocol_flow import ProtocolFlow, draw_stragglers
from tools.datasets import Dataset
from tools.partitioning import FederatedData
from utils.errors import CogShareError, DivergenceError
from utils.patterns import derive_seed, make_rng, minibatches

logger = logging.getLogger(__name__)

Chain = Tuple[ModelParams, ModelParams]


def init_chain(cfg: TrainConfig, feature_dim: int, num_classes: int, seed: int) -> Chain:
    """Encoder and classifier initialized exactly as the protocol initializes them"""
    encoder_rng = make_rng(derive_seed(seed, "client_init"), "client_init")
    encoder = build_encoder(feature_dim, cfg.hidden_dim, cfg.embed_dim, encoder_rng)
    classifier = build_classifier(cfg.embed_dim, cfg.hidden_dim, num_classes, make_rng(seed, "server_init"))
    return encoder, classifier


def train_chain(chain: Chain, features: np.ndarray, labels: np.ndarray, epochs: int, cfg: TrainConfig,
                rng: np.random.Generator) -> Chain:
    """Mini-batch SGD on softmax cross-entropy through encoder then classifier"""
    encoder, classifier = chain
    for _ in range(epochs):
        for idx in minibatches(labels.shape[0], cfg.batch_size, rng):
            enc_trace = forward(encoder, features[idx])
            cls_trace = forward(classifier, enc_trace.output)
            loss, grad = softmax_ce(cls_trace.output, labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError("cross-entropy loss diverged")
            cls_grads, z_grad = backward(classifier, cls_trace, grad)
            enc_grads, _ = backward(encoder, enc_trace, z_grad)
            classifier = sgd_step(classifier, clip_grads(cls_grads, cfg.max_grad_norm), cfg.learning_rate)
            encoder = sgd_step(encoder, clip_grads(enc_grads, cfg.max_grad_norm), cfg.learning_rate)
    return encoder, classifier


def chain_accuracy(chain: Chain, testset: Dataset) -> float:
    return float(np.mean(predict(list(chain), testset.features) == testset.labels))


def fedavg_aggregate(chains: Sequence[Chain], sizes: Sequence[int]) -> Chain:
    """w <- sum_k (n_k / n) w_k for encoder and classifier"""
    return (
        average_params([c[0] for c in chains], sizes),
        average_params([c[1] for c in chains], sizes),
    )


def _record_shared(log: MetricsLog, round_no: int, accuracy: float, client_ids: Sequence[int]) -> None:
    # one shared model: every client reports the global value
    log.record(float(round_no), round_no, GLOBAL, "accuracy", accuracy)
    for k in client_ids:
        log.record(float(round_no), round_no, client_entity(k), "accuracy", accuracy)


def run_fedavg(cfg: SimConfig, schedule: ScheduleConfig, data: FederatedData, seed: int) -> MetricsLog:
    """
    Synchronous FedAvg: stragglers are dropped from each round's average

    Args:
        cfg: experiment configuration (train hyperparameters, target accuracy)
        schedule: rounds and straggler fraction; must be synchronous
        data: client partitions and test set
        seed (int): run seed

    Returns:
        MetricsLog: per-round global accuracy of the shared model
    """
    if schedule.mode != "sync":
        raise ValueError("fedavg runs on the synchronous schedule only")
    log = MetricsLog("fedavg", seed)
    clients = {cd.client_id: cd for cd in data.clients}
    ids = sorted(clients)
    chain = init_chain(cfg.train, data.feature_dim, data.num_classes, seed)
    participation: Dict[int, int] = {k: 0 for k in ids}
    logger.info("Starting fedavg run: %d clients, %d rounds", len(ids), schedule.rounds)
    try:
        for r in range(1, schedule.rounds + 1):
            dropped = {ids[i] for i in draw_stragglers(seed, len(ids), schedule.straggler_fraction, r)}
            participants = [k for k in ids if k not in dropped]
            local: List[Chain] = []
            for k in participants:
                rng = make_rng(seed, "fedavg", k, r)
                cd = clients[k]
                local.append(train_chain(chain, cd.features, cd.labels, cfg.train.local_epochs, cfg.train, rng))
                participation[k] += 1
            chain = fedavg_aggregate(local, [clients[k].n_k for k in participants])
            accuracy = chain_accuracy(chain, data.testset)
            _record_shared(log, r, accuracy, ids)
            log.record(float(r), r, GLOBAL, "participants", len(participants))
            logger.info("Round %d: %d clients averaged, accuracy %.4f", r, len(participants), accuracy)
    except (CogShareError, FloatingPointError) as err:
        log.abort(str(err))
    log.finalize(cfg.target_accuracy, unreliable=data.unreliable, interactions=participation)
    return log


def run_single_device(cfg: SimConfig, data: FederatedData, seed: int) -> MetricsLog:
    """
    Every client learns alone: a private protocol run with one client and the gate disabled

    The private run uses a synchronous schedule without stragglers or active clients.
    """
    log = MetricsLog("single", seed)
    schedule = cfg.schedule.model_copy(update={
        "mode": "sync", "straggler_fraction": 0.0, "active_clients": [], "interactions_per_round": 1,
    })
    train = cfg.train.model_copy(update={"gating": False})
    curves: Dict[int, List[float]] = {}
    counts: Dict[int, int] = {}
    for cd in data.clients:
        private = FederatedData(clients=(cd,), testset=data.testset)
        flow = ProtocolFlow(cfg, schedule, private, seed, train=train, runner="single")
        result = flow.run()
        curves[cd.client_id] = result.accuracy_curve()
        counts[cd.client_id] = flow.clients[cd.client_id].interaction_count
        if result.aborted:
            log.abort(f"client {cd.client_id}: {result.error}")
            break

    rounds = min((len(c) for c in curves.values()), default=0)
    for r in range(1, rounds + 1):
        values = {k: curves[k][r - 1] for k in sorted(curves)}
        log.record(float(r), r, GLOBAL, "accuracy", float(np.mean(list(values.values()))))
        for k, acc in values.items():
            log.record(float(r), r, client_entity(k), "accuracy", acc)
    log.finalize(cfg.target_accuracy, unreliable=data.unreliable, interactions=counts)
    return log


def run_centralized(cfg: SimConfig, data: FederatedData, seed: int) -> MetricsLog:
    """All client data pooled on one device; each round is local_epochs passes over the pool"""
    log = MetricsLog("centralized", seed)
    features = np.vstack([cd.features for cd in data.clients])
    labels = np.concatenate([cd.labels for cd in data.clients])
    ids = [cd.client_id for cd in data.clients]
    chain = init_chain(cfg.train, data.feature_dim, data.num_classes, seed)
    try:
        for r in range(1, cfg.schedule.rounds + 1):
            chain = train_chain(chain, features, labels, cfg.train.local_epochs, cfg.train,
                                make_rng(seed, "centralized", r))
            _record_shared(log, r, chain_accuracy(chain, data.testset), ids)
    except (CogShareError, FloatingPointError) as err:
        log.abort(str(err))
    log.finalize(cfg.target_accuracy, unreliable=data.unreliable)
    return log
