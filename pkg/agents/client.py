"""
Client agent: one participant's modules, its local training pass and its knowledge upload
Each call to client_update runs the cognitive -> descriptive -> discriminative sequence per batch
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from config import TrainConfig
from core.knowledge import KnowledgeTable
from core.linalg_gaussian import GaussianSummary, estimate_gaussian
from core.losses import EmbeddingBatch, cognitive_loss_terms, descriptive_batch, discriminative_loss
from core.neural import (
    ModelParams,
    add_grads,
    backward,
    build_encoder,
    build_generator,
    clip_grads,
    forward,
    predict,
    sgd_step,
)
from tools.datasets import ClientDataset, Dataset
from utils.errors import DimensionMismatchError, DivergenceError
from utils.patterns import make_rng, minibatches, one_hot

logger = logging.getLogger(__name__)

# hook signature: (event name, payload)
StepObserver = Callable[[str, Dict[str, Any]], None]


@dataclass(frozen=True)
class ServerBroadcast:
    """Central classifier and collaborative cognition sent to clients"""
    classifier: ModelParams
    table: KnowledgeTable

    def __post_init__(self):
        if self.classifier.input_dim != self.table.dim:
            raise DimensionMismatchError(
                f"classifier input {self.classifier.input_dim} vs table dim {self.table.dim}")


@dataclass(frozen=True)
class ClientUpload:
    """The only artifact a client ever sends: its generator"""
    client_id: int
    generator: ModelParams
    timestamp: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "client_id": self.client_id,
            "timestamp": self.timestamp,
            "generator": self.generator.to_dict(),
        }


@dataclass(frozen=True)
class ClientState:
    id: int
    encoder: ModelParams
    generator: ModelParams
    classifier: ModelParams
    dataset: ClientDataset
    local_class_knowledge: Dict[int, GaussianSummary] = field(default_factory=dict)
    interaction_count: int = 0
    last_losses: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        d = self.encoder.output_dim
        if self.generator.output_dim != d or self.classifier.input_dim != d:
            raise DimensionMismatchError(
                f"encoder {d}, generator {self.generator.output_dim}, classifier {self.classifier.input_dim}")


def create_client(client_id: int, dataset: ClientDataset, classifier: ModelParams,
                  cfg: TrainConfig, init_seed: int) -> ClientState:
    """
    Build a client whose encoder and generator come from init_seed

    Every client receives the same init_seed so all local modules start identical.
    """
    rng = make_rng(init_seed, "client_init")
    encoder = build_encoder(dataset.parent.feature_dim, cfg.hidden_dim, cfg.embed_dim, rng)
    generator = build_generator(cfg.noise_dim, dataset.num_classes, cfg.hidden_dim, cfg.embed_dim, rng)
    return ClientState(
        id=client_id,
        encoder=encoder,
        generator=generator,
        classifier=classifier.copy(),
        dataset=dataset,
        local_class_knowledge=class_knowledge(
            encoder, dataset.features, dataset.labels, cfg.ridge, cfg.sample_covariance),
    )


def class_precisions(encoder: ModelParams, features: np.ndarray, labels: np.ndarray,
                     ridge: float) -> Dict[int, np.ndarray]:
    """Inverse of each local class covariance (ridged) from the encoder's embeddings"""
    embeddings = forward(encoder, features).output
    return {
        int(c): np.linalg.inv(estimate_gaussian(embeddings[labels == c], ridge).cov)
        for c in np.unique(labels)
    }


def class_knowledge(encoder: ModelParams, features: np.ndarray, labels: np.ndarray,
                    ridge: float, sample_form: bool = False) -> Dict[int, GaussianSummary]:
    embeddings = forward(encoder, features).output
    return {
        int(c): estimate_gaussian(embeddings[labels == c], ridge, sample_form=sample_form)
        for c in np.unique(labels)
    }


def _check_finite(value: float, loss_name: str) -> float:
    if not np.isfinite(value):
        raise DivergenceError(f"{loss_name} loss diverged")
    return value


def client_update(state: ClientState, inbound: ServerBroadcast, cfg: TrainConfig, seed: int,
                  timestamp: float = 0.0,
                  observer: Optional[StepObserver] = None) -> Tuple[ClientState, ClientUpload]:
    """
    One local training pass followed by the generator upload

    Per batch: L_con + L_col updates the encoder; L_des against the updated encoder's embeddings
    updates the generator; L_dis updates the classifier and, through its input gradients,
    the encoder and the generator.

    Args:
        state: client before the pass
        inbound: latest server broadcast
        cfg: training hyperparameters
        seed: seed for shuffling and generator noise
        timestamp: simulation time stamped on the upload
        observer: optional hook receiving every step in order

    Returns:
        (updated ClientState, ClientUpload carrying the trained generator)
    """
    if inbound.table.dim != state.encoder.output_dim:
        raise DimensionMismatchError(f"table dim {inbound.table.dim} vs embed dim {state.encoder.output_dim}")
    rng = np.random.default_rng(seed)
    notify = observer or (lambda event, payload: None)

    encoder, generator = state.encoder, state.generator
    classifier = inbound.classifier.copy()
    table = inbound.table
    features, labels = state.dataset.features, state.dataset.labels
    num_classes = state.dataset.num_classes
    history: List[Dict[str, float]] = []

    for epoch in range(cfg.local_epochs):
        precisions = class_precisions(encoder, features, labels, cfg.ridge)
        for batch_no, idx in enumerate(minibatches(labels.shape[0], cfg.batch_size, rng)):
            xb, yb = features[idx], labels[idx]
            nb = yb.shape[0]
            record = {"epoch": epoch, "batch": batch_no}

            # Step 1: cognitive module on L_con + L_col
            if nb >= 2:
                enc_trace = forward(encoder, xb)
                terms = cognitive_loss_terms(
                    EmbeddingBatch(enc_trace.output, yb), table, cfg.margin, cfg.ridge,
                    cfg.contrastive_weight, cfg.collaborative_weight, cfg.sample_covariance,
                )
                record["contrastive"] = _check_finite(terms.contrastive, "contrastive")
                record["collaborative"] = _check_finite(terms.collaborative, "collaborative")
                enc_grads, _ = backward(encoder, enc_trace, terms.grads)
                encoder = sgd_step(encoder, clip_grads(enc_grads, cfg.max_grad_norm), cfg.learning_rate)
                notify("encoder_update", {"encoder": encoder, "inputs": xb, **record})

            # Step 2: descriptive module imitates the updated encoder
            z_cog = forward(encoder, xb).output
            gen_input = np.hstack([rng.standard_normal((nb, cfg.noise_dim)), one_hot(yb, num_classes)])
            gen_trace = forward(generator, gen_input)
            des_loss, des_grads = descriptive_batch(z_cog, gen_trace.output, yb, precisions)
            record["descriptive"] = _check_finite(des_loss, "descriptive")
            notify("descriptive_loss", {"z_cog": z_cog, "inputs": xb, **record})
            gen_grads, _ = backward(generator, gen_trace, des_grads / nb)
            generator = sgd_step(generator, clip_grads(gen_grads, cfg.max_grad_norm), cfg.learning_rate)

            # Step 3: discriminative module and the upstream modules
            enc_trace = forward(encoder, xb)
            gen_trace = forward(generator, gen_input)
            cog_trace = forward(classifier, enc_trace.output)
            des_trace = forward(classifier, gen_trace.output)
            dis_loss, grad_cog, grad_des = discriminative_loss(cog_trace.output, des_trace.output, yb, cfg.alpha)
            record["discriminative"] = _check_finite(dis_loss, "discriminative")
            cls_from_cog, z_cog_grad = backward(classifier, cog_trace, grad_cog)
            cls_from_des, z_des_grad = backward(classifier, des_trace, grad_des)
            cls_grads = add_grads(cls_from_cog, cls_from_des)
            classifier = sgd_step(classifier, clip_grads(cls_grads, cfg.max_grad_norm), cfg.learning_rate)
            enc_grads, _ = backward(encoder, enc_trace, z_cog_grad)
            encoder = sgd_step(encoder, clip_grads(enc_grads, cfg.max_grad_norm), cfg.learning_rate)
            gen_grads, _ = backward(generator, gen_trace, z_des_grad)
            generator = sgd_step(generator, clip_grads(gen_grads, cfg.max_grad_norm), cfg.learning_rate)
            notify("discriminative_update", record)
            history.append(record)

    knowledge = state.local_class_knowledge
    if cfg.local_epochs > 0:
        knowledge = class_knowledge(encoder, features, labels, cfg.ridge, cfg.sample_covariance)

    new_state = replace(
        state,
        encoder=encoder,
        generator=generator,
        classifier=classifier,
        local_class_knowledge=knowledge,
        interaction_count=state.interaction_count + 1,
        last_losses=_mean_losses(history) if history else state.last_losses,
    )
    logger.debug("Client %d finished interaction %d: %s", state.id, new_state.interaction_count,
                 new_state.last_losses)
    return new_state, ClientUpload(client_id=state.id, generator=generator, timestamp=timestamp)


def _mean_losses(history: List[Dict[str, float]]) -> Dict[str, float]:
    keys = ("contrastive", "collaborative", "descriptive", "discriminative")
    last_epoch = max(r["epoch"] for r in history)
    final = [r for r in history if r["epoch"] == last_epoch]
    return {k: float(np.mean([r[k] for r in final if k in r])) for k in keys if any(k in r for r in final)}


def local_accuracy(state: ClientState, testset: Dataset, classifier: Optional[ModelParams] = None) -> float:
    """Fraction of test samples where argmax classifier(encoder(x)) equals the label"""
    head = classifier if classifier is not None else state.classifier
    predictions = predict([state.encoder, head], testset.features)
    return float(np.mean(predictions == testset.labels))
