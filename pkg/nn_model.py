"""
Small multilayer perceptron with manual backpropagation and Adam.

Stands in for the Siamese encoder and the reconstruction decoder. Both members of a
pair go through the same encoder, so weight sharing needs no extra machinery.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, EMBED_RADIUS, LEARNING_RATE, PARAM_LIMIT
from contrastive import normalize_embeddings, normalize_embeddings_backward
from exceptions import DivergenceError, InvalidInputError, ShapeMismatchError, StaleCacheError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("identity", "relu", "sigmoid")

LayerGrad = Tuple[NDArray, NDArray]


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise InvalidInputError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")


@dataclass
class Layer:
    weight: NDArray  # in_dim x out_dim
    bias: NDArray    # out_dim
    activation: str

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(self.weight.shape[0], self.weight.shape[1], self.activation)


@dataclass
class MlpModel:
    layers: List[Layer]
    rng_seed: int = 0
    # bumped on every parameter update so stale caches can be detected
    version: int = 0

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("a model needs at least one layer")
        for previous, current in zip(self.layers, self.layers[1:]):
            if previous.weight.shape[1] != current.weight.shape[0]:
                raise ShapeMismatchError(
                    f"layer dims do not chain: {previous.weight.shape} -> {current.weight.shape}")
        for layer in self.layers:
            if layer.bias.shape != (layer.weight.shape[1],):
                raise ShapeMismatchError(f"bias shape {layer.bias.shape} does not match weight {layer.weight.shape}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def specs(self) -> List[LayerSpec]:
        return [layer.spec for layer in self.layers]

    def parameters_finite(self) -> bool:
        return all(np.all(np.isfinite(l.weight)) and np.all(np.isfinite(l.bias)) for l in self.layers)

    def copy(self) -> "MlpModel":
        layers = [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        return MlpModel(layers=layers, rng_seed=self.rng_seed, version=self.version)


@dataclass
class ForwardCache:
    inputs: List[NDArray]
    pre_activations: List[NDArray]
    outputs: List[NDArray]
    model_id: int
    version: int


def _activate(a: NDArray, activation: str) -> NDArray:
    if activation == "relu":
        return np.maximum(a, 0.0)
    if activation == "sigmoid":
        return expit(a)
    return a


def init_model(specs: Sequence[LayerSpec], seed: int) -> MlpModel:
    """
    He-normal weights for relu layers, Glorot-normal for sigmoid/identity; zero biases.

    Args:
        specs: chained layer specs
        seed: RNG seed, same seed gives bit-identical parameters
    """
    if not specs:
        raise InvalidInputError("at least one layer spec is required")
    rng = np.random.default_rng(seed)
    layers = []
    for spec in specs:
        if spec.activation == "relu":
            std = math.sqrt(2.0 / spec.in_dim)
        else:
            std = math.sqrt(2.0 / (spec.in_dim + spec.out_dim))
        weight = rng.normal(0.0, std, size=(spec.in_dim, spec.out_dim))
        layers.append(Layer(weight=weight, bias=np.zeros(spec.out_dim), activation=spec.activation))
    return MlpModel(layers=layers, rng_seed=seed)


def forward(model: MlpModel, x: NDArray) -> Tuple[NDArray, ForwardCache]:
    """Affine + activation composition; the cache keeps what backward needs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeMismatchError(f"input shape {x.shape} does not match model input dim {model.input_dim}")

    inputs, pre_activations, outputs = [], [], []
    h = x
    for layer in model.layers:
        inputs.append(h)
        a = h @ layer.weight + layer.bias
        h = _activate(a, layer.activation)
        pre_activations.append(a)
        outputs.append(h)
    cache = ForwardCache(inputs, pre_activations, outputs, model_id=id(model), version=model.version)
    return h, cache


def backward(model: MlpModel, cache: ForwardCache, grad_output: NDArray) -> Tuple[List[LayerGrad], NDArray]:
    """
    Exact gradients of the cached forward pass.

    Returns:
        tuple: ([(dW, db) per layer], gradient with respect to the input)
    """
    if cache.model_id != id(model) or cache.version != model.version or len(cache.inputs) != len(model.layers):
        raise StaleCacheError("forward cache does not belong to the current model parameters")
    grad = np.asarray(grad_output, dtype=np.float64)
    if grad.shape != cache.outputs[-1].shape:
        raise ShapeMismatchError(f"grad_output shape {grad.shape} does not match output {cache.outputs[-1].shape}")

    grads: List[LayerGrad] = [None] * len(model.layers)
    for index in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[index]
        if layer.activation == "relu":
            grad = grad * (cache.pre_activations[index] > 0)
        elif layer.activation == "sigmoid":
            s = cache.outputs[index]
            grad = grad * s * (1.0 - s)
        grads[index] = (cache.inputs[index].T @ grad, grad.sum(axis=0))
        grad = grad @ layer.weight.T
    return grads, grad


@dataclass
class AdamState:
    m: List[LayerGrad]
    v: List[LayerGrad]
    step: int = 0
    lr: float = LEARNING_RATE
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps_adam: float = ADAM_EPS

    @classmethod
    def for_model(cls, model: MlpModel, lr: float = LEARNING_RATE, beta1: float = ADAM_BETA1,
                  beta2: float = ADAM_BETA2, eps_adam: float = ADAM_EPS) -> "AdamState":
        if lr <= 0 or eps_adam <= 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1):
            raise InvalidInputError("invalid Adam hyper-parameters")
        zeros = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.layers]
        return cls(m=zeros, v=[(w.copy(), b.copy()) for w, b in zeros], lr=lr, beta1=beta1,
                   beta2=beta2, eps_adam=eps_adam)


def adam_step(model: MlpModel, grads: Sequence[LayerGrad], state: AdamState) -> Tuple[MlpModel, AdamState]:
    """Bias-corrected Adam update, in place; returns the same model and state objects."""
    if len(grads) != len(model.layers) or len(state.m) != len(model.layers):
        raise ShapeMismatchError("gradients, optimizer state and model have different layer counts")
    for (dw, db), layer in zip(grads, model.layers):
        if dw.shape != layer.weight.shape or db.shape != layer.bias.shape:
            raise ShapeMismatchError("gradient shapes do not match parameters")
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise DivergenceError("non-finite gradient")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for index, layer in enumerate(model.layers):
        updated = []
        for param, grad, m, v in zip((layer.weight, layer.bias), grads[index], state.m[index], state.v[index]):
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            param -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps_adam)
            updated.append(param)
        if np.max(np.abs(updated[0])) > PARAM_LIMIT or np.max(np.abs(updated[1])) > PARAM_LIMIT:
            raise DivergenceError(f"parameter magnitude exceeded {PARAM_LIMIT:g}")
    model.version += 1
    return model, state


def lr_schedule(initial_lr: float, epoch: int, decay_every: int, decay_factor: float) -> float:
    """Step decay: initial_lr * decay_factor ** floor(epoch / decay_every)."""
    if initial_lr <= 0 or decay_every < 1 or decay_factor <= 0 or epoch < 0:
        raise InvalidInputError("lr_schedule needs positive inputs")
    return initial_lr * decay_factor ** (epoch // decay_every)


# ====== Encoder / decoder pair ======

def encoder_specs(input_dim: int, embed_dim: int, hidden: Sequence[int]) -> List[LayerSpec]:
    dims = [input_dim, *hidden, embed_dim]
    activations = ["relu"] * len(hidden) + ["identity"]
    return [LayerSpec(a, b, act) for a, b, act in zip(dims, dims[1:], activations)]


def decoder_specs(embed_dim: int, output_dim: int, hidden: Sequence[int]) -> List[LayerSpec]:
    dims = [embed_dim, *reversed(tuple(hidden)), output_dim]
    activations = ["relu"] * len(hidden) + ["sigmoid"]
    return [LayerSpec(a, b, act) for a, b, act in zip(dims, dims[1:], activations)]


@dataclass
class AutoEncoder:
    """Encoder (optionally projecting onto the sphere of `radius`) plus a sigmoid-output decoder."""

    encoder: MlpModel
    decoder: MlpModel
    normalize: bool = True
    radius: float = EMBED_RADIUS
    encoder_state: AdamState = field(default=None, repr=False)
    decoder_state: AdamState = field(default=None, repr=False)

    def __post_init__(self):
        if self.encoder.output_dim != self.decoder.input_dim:
            raise ShapeMismatchError("encoder output dim differs from decoder input dim")
        if self.encoder.input_dim != self.decoder.output_dim:
            raise ShapeMismatchError("decoder output dim differs from encoder input dim")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise InvalidInputError(f"radius must be > 0, got {self.radius}")

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    @property
    def embed_dim(self) -> int:
        return self.encoder.output_dim

    def encode(self, x: NDArray) -> NDArray:
        h, _ = forward(self.encoder, x)
        return normalize_embeddings(h, self.radius)[0] if self.normalize else h

    def init_optimizers(self, lr: float) -> None:
        self.encoder_state = AdamState.for_model(self.encoder, lr=lr)
        self.decoder_state = AdamState.for_model(self.decoder, lr=lr)


def build_autoencoder(input_dim: int, embed_dim: int, hidden: Sequence[int], seed: int,
                      normalize: bool = True, radius: float = EMBED_RADIUS) -> AutoEncoder:
    encoder = init_model(encoder_specs(input_dim, embed_dim, hidden), seed)
    # decoder gets its own stream so changing the encoder depth does not reshuffle it
    decoder = init_model(decoder_specs(embed_dim, input_dim, hidden), seed + 1)
    logger.debug(f"built autoencoder {input_dim} -> {list(hidden)} -> {embed_dim}, normalize={normalize}"
                 f", radius={radius:g}")
    return AutoEncoder(encoder=encoder, decoder=decoder, normalize=normalize, radius=radius)


def center_encoder_output(model: AutoEncoder, x: NDArray) -> AutoEncoder:
    """
    Shift the last encoder bias so the raw encoder outputs on x have zero mean.

    relu features of non-negative inputs share a large common component; without the
    shift every row projects into the same narrow cap of the sphere.
    """
    h, _ = forward(model.encoder, x)
    model.encoder.layers[-1].bias -= h.mean(axis=0)
    model.encoder.version += 1
    return model


class MlpEmbedder:
    """
    `homotopy_core.Embedder` backed by the encoder: embed runs forward, step backpropagates
    the embedding gradient and applies Adam.
    """

    def __init__(self, autoencoder: AutoEncoder, lr: float = LEARNING_RATE):
        self.autoencoder = autoencoder
        self.state = AdamState.for_model(autoencoder.encoder, lr=lr)

    def embed(self, data: NDArray) -> NDArray:
        return self.autoencoder.encode(data)

    def step(self, data: NDArray, grad_embedding: NDArray) -> None:
        h, cache = forward(self.autoencoder.encoder, data)
        if self.autoencoder.normalize:
            z, norms = normalize_embeddings(h, self.autoencoder.radius)
            grad_embedding = normalize_embeddings_backward(z, norms, grad_embedding, self.autoencoder.radius)
        grads, _ = backward(self.autoencoder.encoder, cache, grad_embedding)
        adam_step(self.autoencoder.encoder, grads, self.state)
