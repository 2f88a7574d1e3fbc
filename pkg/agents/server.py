"""
Server agent: knowledge integration from uploaded generators
Generates embeddings per class, gates them by trace confidence, incrementally trains the central
classifier and updates the collaborative cognition winner-take-all
"""
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from agents.client import ClientUpload, ServerBroadcast
from config import TrainConfig
from core.knowledge import KnowledgeTable
from core.linalg_gaussian import estimate_gaussian
from core.neural import ModelParams, backward, build_classifier, clip_grads, forward, sgd_step, softmax_ce
from utils.errors import DimensionMismatchError
from utils.patterns import make_rng, minibatches, one_hot, split_counts

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GateRecord:
    """One per-class decision taken while integrating an upload"""
    client: int
    class_id: int
    trace_k: float
    trace_r: Optional[float]  # None when the class was uninitialized
    initialized: bool
    learned: bool
    takeover: bool
    gated: bool = True
    timestamp: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ServerState:
    classifier: ModelParams
    table: KnowledgeTable
    gate_log: Tuple[GateRecord, ...] = ()
    rejections: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.classifier.input_dim != self.table.dim:
            raise DimensionMismatchError(
                f"classifier input {self.classifier.input_dim} vs table dim {self.table.dim}")

    @property
    def num_classes(self) -> int:
        return self.classifier.output_dim


def gate_decision(trace_k: float, trace_r: Optional[float], initialized: bool, beta: float,
                  gating: bool = True) -> Tuple[bool, bool]:
    """
    Confidence gate for one class event

    Args:
        trace_k (float): tr(Sigma_k) of the uploaded knowledge
        trace_r (float): tr(Sigma_R) held by the server (ignored when uninitialized)
        initialized (bool): whether the table entry already holds knowledge
        beta (float): confidence level, > 1
        gating (bool): when False every event learns and every initialized class is taken over

    Returns:
        (learned, takeover)
    """
    if not initialized:
        return True, False
    if not gating:
        return True, True
    return trace_k < beta * trace_r, trace_k < trace_r / beta


def init_server(cfg: TrainConfig, num_classes: int, seed: int) -> ServerState:
    """Fresh classifier and a table with every class uninitialized"""
    rng = make_rng(seed, "server_init")
    classifier = build_classifier(cfg.embed_dim, cfg.hidden_dim, num_classes, rng)
    return ServerState(classifier=classifier, table=KnowledgeTable.fresh(num_classes, cfg.embed_dim))


def generate_embeddings(generator: ModelParams, num_classes: int, n_gen: int, noise_dim: int,
                        rng: np.random.Generator) -> Dict[int, np.ndarray]:
    """n_gen embeddings split evenly across classes, from noise concatenated with the one-hot label"""
    out = {}
    with np.errstate(over="ignore", invalid="ignore"):
        for class_id, count in enumerate(split_counts(n_gen, num_classes)):
            labels = np.full(count, class_id)
            gen_input = np.hstack([rng.standard_normal((count, noise_dim)), one_hot(labels, num_classes)])
            out[class_id] = forward(generator, gen_input).output
    return out


def _learn(classifier: ModelParams, embeddings: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
           rng: np.random.Generator) -> ModelParams:
    for idx in minibatches(labels.shape[0], cfg.batch_size, rng):
        trace = forward(classifier, embeddings[idx])
        _, grad = softmax_ce(trace.output, labels[idx])
        grads, _ = backward(classifier, trace, grad)
        classifier = sgd_step(classifier, clip_grads(grads, cfg.max_grad_norm), cfg.learning_rate)
    return classifier


def integrate_upload(server: ServerState, upload: ClientUpload, cfg: TrainConfig, seed: int,
                     n_gen: int = 800) -> ServerState:
    """
    Integrate one client's generator into the server state

    Every class is judged on the same generated sample set: the gate decides whether its
    embeddings join the incremental learning pass and, independently, whether the client's
    knowledge takes over the table entry (Sigma_R <- Sigma_k, mu_R <- (mu_k + mu_R) / 2).
    An upload producing non-finite embeddings is rejected as a whole. Classes that receive fewer
    than two generated embeddings are neither learned nor taken over, and leave no gate record.

    Args:
        server: state before integration
        upload: the client's generator
        cfg: training hyperparameters (beta, ridge, learning rate, batch size, gating)
        seed: seed for generation noise and the learning pass shuffle
        n_gen (int): embeddings generated per integration, split across classes

    Returns:
        ServerState: the new state; the input is left untouched
    """
    generator = upload.generator
    if generator.output_dim != server.table.dim:
        raise DimensionMismatchError(f"generator output {generator.output_dim} vs table dim {server.table.dim}")
    num_classes = server.num_classes
    if generator.input_dim != cfg.noise_dim + num_classes:
        raise DimensionMismatchError(
            f"generator input {generator.input_dim} vs noise {cfg.noise_dim} + {num_classes} classes")
    rng = np.random.default_rng(seed)

    generated = generate_embeddings(generator, num_classes, n_gen, cfg.noise_dim, rng)
    if not all(np.all(np.isfinite(z)) for z in generated.values()):
        logger.warning("Rejected upload from client %d: degenerate generator", upload.client_id)
        rejections = dict(server.rejections)
        rejections[upload.client_id] = rejections.get(upload.client_id, 0) + 1
        return replace(server, rejections=rejections)

    table = server.table
    records: List[GateRecord] = []
    admitted: List[int] = []
    for class_id in range(num_classes):
        if generated[class_id].shape[0] < 2:
            # one embedding has no spread; its trace is just ridge * d
            logger.warning("Client %d class %d: skipped, %d generated embedding(s) cannot be judged",
                           upload.client_id, class_id, generated[class_id].shape[0])
            continue
        knowledge = estimate_gaussian(generated[class_id], cfg.ridge, sample_form=cfg.sample_covariance)
        entry = table.entries[class_id]
        trace_r = entry.trace if entry.initialized else None
        learned, takeover = gate_decision(knowledge.trace, trace_r, entry.initialized, cfg.beta, cfg.gating)

        if not entry.initialized:
            table = table.with_entry(class_id, mean=knowledge.mean, cov=knowledge.cov,
                                     initialized=True, last_winner=upload.client_id)
        elif takeover:
            table = table.with_entry(class_id, mean=0.5 * (knowledge.mean + entry.mean), cov=knowledge.cov,
                                     last_winner=upload.client_id)
        if learned:
            admitted.append(class_id)
        records.append(GateRecord(
            client=upload.client_id,
            class_id=class_id,
            trace_k=knowledge.trace,
            trace_r=trace_r,
            initialized=entry.initialized,
            learned=learned,
            takeover=takeover,
            gated=cfg.gating,
            timestamp=upload.timestamp,
        ))
        logger.debug("Client %d class %d: tr_k=%.4f tr_r=%s learned=%s takeover=%s",
                     upload.client_id, class_id, knowledge.trace,
                     "-" if trace_r is None else f"{trace_r:.4f}", learned, takeover)

    classifier = server.classifier
    if admitted:
        embeddings = np.vstack([generated[c] for c in admitted])
        labels = np.concatenate([np.full(generated[c].shape[0], c) for c in admitted])
        classifier = _learn(classifier, embeddings, labels, cfg, rng)

    return replace(server, classifier=classifier, table=table, gate_log=server.gate_log + tuple(records))


def broadcast(server: ServerState) -> ServerBroadcast:
    return ServerBroadcast(classifier=server.classifier.copy(), table=server.table.copy())


def replay_gate_log(records: Sequence[GateRecord], beta: float) -> List[GateRecord]:
    """Recompute every decision from its recorded traces; returns the records that disagree"""
    mismatches = []
    for record in records:
        expected = gate_decision(record.trace_k, record.trace_r, record.initialized, beta, record.gated)
        if expected != (record.learned, record.takeover):
            mismatches.append(record)
    return mismatches
