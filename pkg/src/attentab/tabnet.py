"""TabNet-style attentive tabular classifier.

The model embeds categorical codes, batch-normalizes the feature matrix,
then runs a sequence of decision steps. Each step selects features with a
sparsemax mask produced by an attentive transformer (scaled by a cumulative
prior so features get "spent"), transforms the masked features through a
GLU stack, and contributes relu(d) to the aggregate decision. Mask entropy
is returned as a sparsity penalty for the training loss.

Conventions the original TabNet write-up leaves open follow the common
reference implementation: prior update P <- P * (gamma_relax - M), residual
connections scaled by sqrt(0.5), relu(d) aggregation, entropy sparsity
penalty, and ghost batch normalization inside the transformer blocks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import (
    SQRT_HALF,
    BatchNorm,
    Parameter,
    Tape,
    Tensor,
    add,
    add_const,
    concat_cols,
    embedding,
    glu,
    linear,
    log,
    mask_fill,
    mul,
    reduce_sum,
    relu,
    scale,
    slice_cols,
    sparsemax,
)
from .container import MODEL_MAGIC, read_container, write_container
from .data import KIND_CATEGORICAL, KIND_CONTINUOUS, FeatureSchema
from .errors import ConfigError, EncodingError, ModelStateError, PersistenceError

# A prior of exactly zero must keep a feature out of the mask even when its
# score would top the row (a zero product wins sparsemax whenever every
# kept score is negative), so exhausted features are pushed far below any
# reachable score instead of relying on the multiplicative zero.
EXCLUDED_SCORE = -1e30

SPARSITY_EPS = 1e-10


@dataclass
class TabNetConfig:
    """Architecture hyperparameters."""

    n_d: int = 16
    n_a: int = 16
    n_steps: int = 4
    gamma_relax: float = 1.3
    lambda_sparse: float = 1e-4
    embed_dims: int | list[int] = 1
    virtual_batch: int | None = None
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_d", "n_a", "n_steps"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.gamma_relax < 1.0:
            raise ConfigError(f"gamma_relax must be >= 1, got {self.gamma_relax}")
        if self.lambda_sparse < 0.0:
            raise ConfigError(f"lambda_sparse must be >= 0, got {self.lambda_sparse}")
        if isinstance(self.embed_dims, int):
            if self.embed_dims < 1:
                raise ConfigError(f"embed_dims must be >= 1, got {self.embed_dims}")
        else:
            if not self.embed_dims or any(d < 1 for d in self.embed_dims):
                raise ConfigError("embed_dims list entries must all be >= 1")
        if self.virtual_batch is not None and self.virtual_batch < 2:
            raise ConfigError(
                f"virtual_batch must be None or >= 2, got {self.virtual_batch}"
            )


class LinearLayer:
    """Dense layer with Glorot-uniform weights and zero biases."""

    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int, name: str):
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        self.w = Parameter(rng.uniform(-limit, limit, size=(in_dim, out_dim)), name=f"{name}/w")
        self.b = Parameter(np.zeros(out_dim), name=f"{name}/b")

    def __call__(self, tape: Tape | None, x: Tensor) -> Tensor:
        return linear(tape, x, self.w, self.b)

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


class GLUBlock:
    """linear -> batch norm -> gated linear unit.

    A block can borrow its linear layer and its BN scale/shift from another
    block (parameter sharing across decision steps). Borrowed pieces are not
    re-registered; BN running statistics always stay local to the block, so
    each call site normalizes with statistics of its own input distribution.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        in_dim: int,
        out_dim: int,
        virtual_batch: int | None,
        name: str,
        shared_fc: LinearLayer | None = None,
        shared_affine: tuple[Parameter, Parameter] | None = None,
    ):
        if shared_fc is None:
            self.fc = LinearLayer(rng, in_dim, 2 * out_dim, f"{name}/fc")
            self._owns_fc = True
        else:
            self.fc = shared_fc
            self._owns_fc = False
        self.bn = BatchNorm(
            2 * out_dim, virtual_batch=virtual_batch, name=f"{name}/bn", affine=shared_affine
        )

    def __call__(self, tape: Tape | None, x: Tensor, training: bool) -> Tensor:
        return glu(tape, self.bn(tape, self.fc(tape, x), training))

    def parameters(self) -> list[Parameter]:
        out = self.fc.parameters() if self._owns_fc else []
        return out + self.bn.parameters()

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        if self._owns_fc:
            out += [(self.fc.w.name, self.fc.w.data), (self.fc.b.name, self.fc.b.data)]
        return out + self.bn.state_arrays()


class FeatureTransformer:
    """Four GLU blocks; the first two borrow shared parameters, the last two
    are step-specific. Blocks after the first add a residual scaled by
    sqrt(0.5) so repeated application keeps variance roughly constant.
    """

    def __init__(self, blocks: list[GLUBlock]):
        self.blocks = blocks

    def __call__(self, tape: Tape | None, x: Tensor, training: bool) -> Tensor:
        h = self.blocks[0](tape, x, training)
        for block in self.blocks[1:]:
            h = scale(tape, add(tape, block(tape, h, training), h), SQRT_HALF)
        return h

    def parameters(self) -> list[Parameter]:
        out = []
        for block in self.blocks:
            out.extend(block.parameters())
        return out

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for block in self.blocks:
            out.extend(block.state_arrays())
        return out


class AttentiveTransformer:
    """Produces the step mask: sparsemax(prior * BN(FC(a_prev)))."""

    def __init__(
        self,
        rng: np.random.Generator,
        n_a: int,
        d_features: int,
        virtual_batch: int | None,
        name: str,
    ):
        self.fc = LinearLayer(rng, n_a, d_features, f"{name}/fc")
        self.bn = BatchNorm(d_features, virtual_batch=virtual_batch, name=f"{name}/bn")

    def __call__(self, tape: Tape | None, a_prev: Tensor, prior: Tensor, training: bool) -> Tensor:
        h = self.bn(tape, self.fc(tape, a_prev), training)
        scores = mul(tape, prior, h)
        keep = prior.data > 0.0
        if not keep.all():
            scores = mask_fill(tape, scores, keep, EXCLUDED_SCORE)
        return sparsemax(tape, scores)

    def parameters(self) -> list[Parameter]:
        return self.fc.parameters() + self.bn.parameters()

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [
            (self.fc.w.name, self.fc.w.data),
            (self.fc.b.name, self.fc.b.data),
        ] + self.bn.state_arrays()


@dataclass
class ForwardOutput:
    logits: Tensor
    masks: list[Tensor]  # n_steps tensors [B, D]
    decisions: list[Tensor]  # n_steps tensors [B, n_d], already relu'd
    sparsity: Tensor  # scalar mask-entropy penalty


@dataclass
class MaskReport:
    """Interpretability artifacts in raw-column space."""

    per_step_masks: list[np.ndarray]  # embedded space, [B, D] each
    step_weights: np.ndarray  # [B, n_steps]
    instance_importance: np.ndarray  # [B, n_raw], rows sum to 1
    global_importance: np.ndarray  # [n_raw], sums to 1
    feature_names: list[str]

    def top(self, k: int) -> list[tuple[str, float]]:
        order = sorted(
            range(len(self.feature_names)),
            key=lambda j: (-self.global_importance[j], self.feature_names[j]),
        )
        return [
            (self.feature_names[j], float(self.global_importance[j]))
            for j in order[: max(k, 0)]
        ]


class TabNetClassifier:
    """Sequential-attention classifier over an encoded feature matrix."""

    def __init__(self, config: TabNetConfig, schema: FeatureSchema):
        config.validate()
        self.config = config
        self.schema = schema
        self.fitted = False
        self.train_info: dict | None = None

        active = schema.feature_columns()
        if not active:
            raise ConfigError("schema has no active feature columns")
        self.n_classes = len(schema.labels)
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")

        cat_cols = [c for c in active if c.kind == KIND_CATEGORICAL]
        if isinstance(config.embed_dims, int):
            dims = [config.embed_dims] * len(cat_cols)
        else:
            dims = list(config.embed_dims)
            if len(dims) != len(cat_cols):
                raise ConfigError(
                    f"embed_dims lists {len(dims)} widths for {len(cat_cols)} "
                    "categorical columns"
                )

        rng = np.random.default_rng(config.seed)

        # Embedding tables carry one extra row: the reserved code for values
        # unseen at fit time equals the fitted cardinality.
        self.embeddings: dict[str, Parameter] = {}
        self._columns: list[tuple[str, str, int]] = []  # (name, kind, width)
        dim_iter = iter(dims)
        for col in active:
            if col.kind == KIND_CONTINUOUS:
                self._columns.append((col.name, KIND_CONTINUOUS, 1))
            else:
                width = next(dim_iter)
                table = Parameter(
                    rng.normal(0.0, 0.1, size=(int(col.cardinality) + 1, width)),
                    name=f"embed/{col.name}",
                )
                self.embeddings[col.name] = table
                self._columns.append((col.name, KIND_CATEGORICAL, width))
        self.d_model = sum(width for _, _, width in self._columns)

        width = config.n_d + config.n_a
        vb = config.virtual_batch
        self.input_bn = BatchNorm(self.d_model, name="input_bn")
        self.shared_fcs = [
            LinearLayer(rng, self.d_model, 2 * width, "shared/0/fc"),
            LinearLayer(rng, width, 2 * width, "shared/1/fc"),
        ]
        self.shared_affines = [
            (
                Parameter(np.ones(2 * width), name=f"shared/{k}/bn.gamma"),
                Parameter(np.zeros(2 * width), name=f"shared/{k}/bn.beta"),
            )
            for k in range(2)
        ]
        # Transformer 0 is the initial splitter producing a[0]; 1..n_steps
        # serve the decision steps.
        self.transformers = [
            FeatureTransformer(
                [
                    GLUBlock(
                        rng, self.d_model, width, vb, f"ft/{t}/shared/0",
                        shared_fc=self.shared_fcs[0], shared_affine=self.shared_affines[0],
                    ),
                    GLUBlock(
                        rng, width, width, vb, f"ft/{t}/shared/1",
                        shared_fc=self.shared_fcs[1], shared_affine=self.shared_affines[1],
                    ),
                    GLUBlock(rng, width, width, vb, f"ft/{t}/own/0"),
                    GLUBlock(rng, width, width, vb, f"ft/{t}/own/1"),
                ]
            )
            for t in range(config.n_steps + 1)
        ]
        self.attentives = [
            AttentiveTransformer(rng, config.n_a, self.d_model, vb, f"att/{i}")
            for i in range(config.n_steps)
        ]
        self.final = LinearLayer(rng, config.n_d, self.n_classes, "final")

    # ---------------------------------------------------------------- state

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = list(self.embeddings.values())
        params += self.input_bn.parameters()
        for fc in self.shared_fcs:
            params += fc.parameters()
        for gamma, beta in self.shared_affines:
            params += [gamma, beta]
        for tr in self.transformers:
            params += tr.parameters()
        for att in self.attentives:
            params += att.parameters()
        params += self.final.parameters()
        return params

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """All persistent arrays (trainable parameters plus BN buffers)."""
        out: list[tuple[str, np.ndarray]] = [
            (p.name, p.data) for p in self.embeddings.values()
        ]
        out += self.input_bn.state_arrays()
        for fc in self.shared_fcs:
            out += [(fc.w.name, fc.w.data), (fc.b.name, fc.b.data)]
        for gamma, beta in self.shared_affines:
            out += [(gamma.name, gamma.data), (beta.name, beta.data)]
        for tr in self.transformers:
            out += tr.state_arrays()
        for att in self.attentives:
            out += att.state_arrays()
        out += [(self.final.w.name, self.final.w.data), (self.final.b.name, self.final.b.data)]
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state_arrays()
        if set(arrays) != {name for name, _ in expected}:
            missing = {name for name, _ in expected} - set(arrays)
            extra = set(arrays) - {name for name, _ in expected}
            raise PersistenceError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, current in expected:
            incoming = arrays[name]
            if incoming.shape != current.shape:
                raise PersistenceError(
                    f"array {name!r}: shape {incoming.shape} != expected {current.shape}"
                )
            current[...] = incoming

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_arrays()}

    # -------------------------------------------------------------- forward

    def embed(self, tape: Tape | None, X: np.ndarray) -> Tensor:
        """Encoded matrix -> dense features: continuous columns pass through,
        categorical codes go through their embedding tables."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self._columns):
            raise EncodingError(
                f"expected matrix with {len(self._columns)} columns, got shape {X.shape}"
            )
        parts: list[Tensor] = []
        for j, (name, kind, _) in enumerate(self._columns):
            col = X[:, j]
            if kind == KIND_CONTINUOUS:
                parts.append(Tensor(col[:, None].copy()))
            else:
                table = self.embeddings[name]
                codes = col.astype(np.int64)
                if np.any(codes != col):
                    raise EncodingError(f"column {name!r}: non-integer categorical code")
                if codes.size and (codes.min() < 0 or codes.max() >= table.data.shape[0]):
                    raise EncodingError(
                        f"column {name!r}: code out of range 0..{table.data.shape[0] - 1}"
                    )
                parts.append(embedding(tape, table, codes))
        return concat_cols(tape, parts)

    def attribution_map(self) -> list[tuple[str, slice]]:
        """Raw column name -> slice of embedded columns, in raw order."""
        out = []
        start = 0
        for name, _, width in self._columns:
            out.append((name, slice(start, start + width)))
            start += width
        return out

    def forward(
        self,
        tape: Tape | None,
        X: np.ndarray,
        training: bool,
        fixed_masks: list[np.ndarray] | None = None,
    ) -> ForwardOutput:
        """Full pipeline. ``fixed_masks`` replays externally supplied masks
        (one [B, D] array per step) instead of running the attentive
        transformers; used to probe the masking mechanism in isolation."""
        cfg = self.config
        feats = self.input_bn(tape, self.embed(tape, X), training)
        B = feats.data.shape[0]

        split = self.transformers[0](tape, feats, training)
        a_prev = slice_cols(tape, split, cfg.n_d, cfg.n_d + cfg.n_a)
        prior = Tensor(np.ones((B, self.d_model)))

        masks: list[Tensor] = []
        decisions: list[Tensor] = []
        agg: Tensor | None = None
        entropy_sum: Tensor | None = None
        for i in range(cfg.n_steps):
            if fixed_masks is not None:
                mask = Tensor(fixed_masks[i])
            else:
                mask = self.attentives[i](tape, a_prev, prior, training)
                prior = mul(tape, prior, add_const(tape, scale(tape, mask, -1.0), cfg.gamma_relax))
            masks.append(mask)

            masked = mul(tape, mask, feats)
            out = self.transformers[i + 1](tape, masked, training)
            d = relu(tape, slice_cols(tape, out, 0, cfg.n_d))
            a_prev = slice_cols(tape, out, cfg.n_d, cfg.n_d + cfg.n_a)
            decisions.append(d)
            agg = d if agg is None else add(tape, agg, d)

            ent = reduce_sum(tape, mul(tape, mask, log(tape, add_const(tape, mask, SPARSITY_EPS))))
            entropy_sum = ent if entropy_sum is None else add(tape, entropy_sum, ent)

        logits = self.final(tape, agg)
        sparsity = scale(tape, entropy_sum, -1.0 / (cfg.n_steps * B))
        return ForwardOutput(logits=logits, masks=masks, decisions=decisions, sparsity=sparsity)

    def predict_logits(self, X: np.ndarray, batch_size: int = 4096) -> np.ndarray:
        """Eval-mode logits, computed in bounded-memory chunks."""
        chunks = []
        for start in range(0, X.shape[0], batch_size):
            out = self.forward(None, X[start : start + batch_size], training=False)
            chunks.append(out.logits.data)
        return np.concatenate(chunks, axis=0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_logits(X), axis=1)

    # -------------------------------------------------------------- explain

    def explain(self, X: np.ndarray) -> MaskReport:
        """Aggregate step masks into instance/global feature importances,
        attributed back to raw columns."""
        if not self.fitted:
            raise ModelStateError("explain requires a fitted model")
        out = self.forward(None, X, training=False)
        masks = [m.data for m in out.masks]
        step_weights = np.stack([d.data.sum(axis=1) for d in out.decisions], axis=1)

        embedded = np.zeros_like(masks[0])
        for i, mask in enumerate(masks):
            embedded += step_weights[:, i : i + 1] * mask
        row_sums = embedded.sum(axis=1, keepdims=True)
        # Rows whose every decision output is zero carry no weighting signal;
        # fall back to the plain mask average (rows of which sum to 1).
        degenerate = row_sums[:, 0] <= 0.0
        if degenerate.any():
            fallback = np.mean(masks, axis=0)
            embedded[degenerate] = fallback[degenerate]
            row_sums = embedded.sum(axis=1, keepdims=True)
        embedded /= row_sums

        attribution = self.attribution_map()
        names = [name for name, _ in attribution]
        instance = np.empty((embedded.shape[0], len(attribution)))
        for r, (_, cols) in enumerate(attribution):
            instance[:, r] = embedded[:, cols].sum(axis=1)
        return MaskReport(
            per_step_masks=masks,
            step_weights=step_weights,
            instance_importance=instance,
            global_importance=instance.mean(axis=0),
            feature_names=names,
        )


# ------------------------------------------------------------- persistence


def save_model(path: str, model: TabNetClassifier) -> None:
    header = {
        "format": "attentab-model",
        "version": 1,
        "config": asdict(model.config),
        "schema": model.schema.to_dict(),
        "schema_hash": model.schema.hash(),
        "n_classes": model.n_classes,
        "fitted": model.fitted,
        "train_info": model.train_info,
    }
    write_container(path, MODEL_MAGIC, header, model.state_arrays())


def load_model(path: str) -> TabNetClassifier:
    header, arrays = read_container(path, MODEL_MAGIC)
    config = TabNetConfig(**header["config"])
    if isinstance(config.embed_dims, list):
        config.embed_dims = [int(d) for d in config.embed_dims]
    schema = FeatureSchema.from_dict(header["schema"])
    model = TabNetClassifier(config, schema)
    if model.n_classes != header["n_classes"]:
        raise PersistenceError(
            f"header claims {header['n_classes']} classes, schema implies {model.n_classes}"
        )
    model.load_state(arrays)
    model.fitted = bool(header.get("fitted", False))
    model.train_info = header.get("train_info")
    return model
