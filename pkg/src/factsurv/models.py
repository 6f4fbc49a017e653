"""Risk functions mapping a window (plus driver id) to a scalar log-risk.

All models work on batches: ``features`` is (B, L, p + 2), ``pad_mask`` is
(B, L) with True on left-padding rows, and ``driver_rows`` indexes the
frailty table (-1 for drivers never seen in training, which fall back to
the zero, population-level frailty).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import MASK_SENTINEL, Tensor
from .errors import InvalidArgument, MissingFile, NumericFailure, SchemaError, UnknownDriver

KINDS = ("linear", "frailty-linear", "mlp", "transformer", "fact")
ATTENTION_KINDS = ("transformer", "fact")
FRAILTY_KINDS = ("frailty-linear", "fact")

# CLI model names
MODEL_ALIASES = {"coxph": "linear", "frailty-coxph": "frailty-linear", "deepsurv": "mlp",
                 "transformer-cox": "transformer", "fact": "fact"}


@dataclass
class FactConfig:
    n_heads: int = 2
    frailty_dim: int = 4
    n_layers: int = 2
    hidden_dim: int = 16
    seq_len: int = 21
    input_dim: int = 21
    n_drivers: int = 1
    dropout: float = 0.0
    ffn_mult: int = 4

    def validate(self) -> None:
        for name in ("n_heads", "frailty_dim", "n_layers", "hidden_dim", "seq_len", "input_dim",
                     "n_drivers", "ffn_mult"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden_dim % self.n_heads:
            raise InvalidArgument(f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgument(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def n_covariates(self) -> int:
        return self.input_dim - 2


def positional_encoding(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def causal_mask(length: int) -> np.ndarray:
    """(L, L) additive mask: 0 where key <= query, sentinel where key is later."""
    if length < 1:
        raise InvalidArgument(f"sequence length must be >= 1, got {length}")
    return np.where(np.triu(np.ones((length, length), bool), k=1), MASK_SENTINEL, 0.0)


def attention_mask(pad_mask: np.ndarray) -> np.ndarray:
    """Causal mask combined with key padding, shaped (B, 1, L, L)."""
    length = pad_mask.shape[1]
    blocked = np.triu(np.ones((length, length), bool), k=1)[None, :, :] | pad_mask[:, None, :]
    return np.where(blocked, MASK_SENTINEL, 0.0)[:, None, :, :]


def n_parameters_closed_form(kind: str, cfg: FactConfig) -> int:
    """Parameter count implied by the architecture (used as a test oracle)."""
    p, d, n = cfg.n_covariates, cfg.hidden_dim, cfg.frailty_dim
    if kind == "linear":
        return p
    if kind == "frailty-linear":
        return p + cfg.n_drivers
    if kind == "mlp":
        return p * d + d + d * d + d + d + 1
    f = cfg.ffn_mult * d
    per_layer = 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d) + 2 * d
    total = cfg.input_dim * d + d + cfg.n_layers * per_layer
    if kind == "transformer":
        return total + d + 1
    return total + (d + n) + 1 + cfg.n_drivers * n


class RiskModel:
    def __init__(self, kind: str, config: FactConfig, params: dict, driver_ids: Sequence[str] = ()):
        if kind not in KINDS:
            raise InvalidArgument(f"unknown model kind {kind!r}")
        self.kind = kind
        self.config = config
        self.params: dict[str, Tensor] = params
        self.driver_ids = list(driver_ids)
        self.driver_index = {d: i for i, d in enumerate(self.driver_ids)}
        self.last_attention: list[np.ndarray] | None = None

    # -- bookkeeping ----------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict) -> None:
        for k, v in state.items():
            self.params[k].data[...] = v

    def rows_for(self, driver_ids, strict: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Frailty-table rows and a flag array marking unknown drivers."""
        rows = np.array([self.driver_index.get(str(d), -1) for d in driver_ids], dtype=np.int64)
        unknown = rows < 0
        if strict and unknown.any() and self.kind in FRAILTY_KINDS:
            raise UnknownDriver(f"unknown driver {np.asarray(driver_ids)[unknown][0]!r}")
        return rows, unknown

    def frailty_contribution(self) -> dict[str, float]:
        """Per-driver additive log-risk carried by the frailty term."""
        if self.kind == "frailty-linear":
            gamma = self.params["gamma"].data[:, 0]
            return {d: float(gamma[i]) for i, d in enumerate(self.driver_ids)}
        if self.kind == "fact":
            d = self.config.hidden_dim
            w_e = self.params["head.w"].data[d:, 0]
            contrib = self.params["frailty"].data @ w_e
            return {drv: float(contrib[i]) for i, drv in enumerate(self.driver_ids)}
        raise InvalidArgument(f"{self.kind} model has no frailty term")

    # -- forward pieces -------------------------------------------------
    def _frailty(self, name: str, rows: np.ndarray) -> Tensor:
        known = rows >= 0
        looked = ad.embedding_lookup(self.params[name], np.where(known, rows, 0))
        if known.all():
            return looked
        return looked * known[:, None].astype(np.float64)

    def input_projection(self, features) -> Tensor:
        x = ad.as_tensor(features)
        cfg = self.config
        if x.shape[-1] != cfg.input_dim or x.shape[-2] != cfg.seq_len:
            raise InvalidArgument(
                f"window shape {x.shape[-2:]} does not match (L={cfg.seq_len}, inputs={cfg.input_dim})")
        e = ad.matmul(x, self.params["proj.w"]) + self.params["proj.b"]
        return e + positional_encoding(cfg.seq_len, cfg.hidden_dim)

    def encoder_forward(self, projected: Tensor, pad_mask: np.ndarray | None = None,
                        training: bool = False, rng=None, keep_attention: bool = False,
                        last_only: bool = False) -> Tensor:
        """Masked self-attention encoder over (B, L, d) or (L, d) input.

        Returns every position, or with ``last_only`` just the final one (the
        last layer then computes only the target row, which is all the risk
        head needs).
        """
        cfg = self.config
        h = projected
        squeeze = h.ndim == 2
        if squeeze:
            h = ad.reshape(h, (1,) + h.shape)
        b, length, d = h.shape
        if pad_mask is None:
            pad_mask = np.zeros((b, length), bool)
        mask = attention_mask(np.asarray(pad_mask, bool).reshape(b, length))
        m = cfg.n_heads
        dk = d // m
        attn_store = []
        for layer in range(cfg.n_layers):
            pre = f"layer{layer}."
            tail = last_only and layer == cfg.n_layers - 1
            h_q = h[:, -1:, :] if tail else h
            n_q = h_q.shape[1]

            def heads(t, n):
                return ad.transpose(ad.reshape(t, (b, n, m, dk)), (0, 2, 1, 3))

            q = heads(ad.matmul(h_q, self.params[pre + "wq"]) + self.params[pre + "bq"], n_q)
            k = heads(ad.matmul(h, self.params[pre + "wk"]) + self.params[pre + "bk"], length)
            v = heads(ad.matmul(h, self.params[pre + "wv"]) + self.params[pre + "bv"], length)
            scores = ad.matmul(q, ad.transpose(k)) * (1.0 / np.sqrt(dk))
            a = ad.softmax(scores, mask[:, :, -n_q:, :])
            if keep_attention:
                attn_store.append(a.data.copy())
            ctx = ad.reshape(ad.transpose(ad.matmul(a, v), (0, 2, 1, 3)), (b, n_q, d))
            att = ad.matmul(ctx, self.params[pre + "wo"]) + self.params[pre + "bo"]
            att = ad.dropout(att, cfg.dropout, training, rng)
            h = ad.layer_norm(h_q + att) * self.params[pre + "ln1.g"] + self.params[pre + "ln1.b"]
            ff = ad.relu(ad.matmul(h, self.params[pre + "ff1.w"]) + self.params[pre + "ff1.b"])
            ff = ad.matmul(ff, self.params[pre + "ff2.w"]) + self.params[pre + "ff2.b"]
            ff = ad.dropout(ff, cfg.dropout, training, rng)
            h = ad.layer_norm(h + ff) * self.params[pre + "ln2.g"] + self.params[pre + "ln2.b"]
            if not np.all(np.isfinite(h.data)):
                raise NumericFailure(f"non-finite activations in encoder layer {layer}")
        self.last_attention = attn_store if keep_attention else None
        return ad.reshape(h, h.shape[1:]) if squeeze else h

    def risk_head(self, z: Tensor, e: Tensor | None) -> Tensor:
        if (e is not None) != (self.kind == "fact"):
            raise InvalidArgument("frailty embedding must be given exactly for the fact model")
        inp = ad.concat([z, e], axis=-1) if e is not None else z
        r = ad.matmul(inp, self.params["head.w"]) + self.params["head.b"]
        return ad.reshape(r, r.shape[:-1])

    def forward(self, features, pad_mask=None, driver_rows=None, training: bool = False,
                rng=None, keep_attention: bool = False) -> Tensor:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        b = x.shape[0]
        p = self.config.n_covariates
        if x.shape[-1] != p + 2:
            raise InvalidArgument(f"expected {p + 2} inputs per step, got {x.shape[-1]}")
        rows = np.full(b, -1, np.int64) if driver_rows is None else np.asarray(driver_rows, np.int64)
        if self.kind in ("linear", "frailty-linear", "mlp"):
            target = Tensor(x[:, -1, :p])
            if self.kind == "linear" and self.params["beta"].shape[0] != p:
                # windowed CoxPH: history rows plus target covariates, flattened
                target = Tensor(np.concatenate([x[:, :-1, :].reshape(b, -1), x[:, -1, :p]], axis=1))
            if self.kind == "mlp":
                h = ad.relu(ad.matmul(target, self.params["mlp.w1"]) + self.params["mlp.b1"])
                h = ad.dropout(h, self.config.dropout, training, rng)
                h = ad.relu(ad.matmul(h, self.params["mlp.w2"]) + self.params["mlp.b2"])
                h = ad.dropout(h, self.config.dropout, training, rng)
                r = ad.matmul(h, self.params["mlp.out.w"]) + self.params["mlp.out.b"]
            else:
                r = ad.matmul(target, self.params["beta"])
                if self.kind == "frailty-linear":
                    r = r + self._frailty("gamma", rows)
            out = ad.reshape(r, (b,))
        else:
            if pad_mask is None:
                pad_mask = np.zeros(x.shape[:2], bool)
            hidden = self.encoder_forward(self.input_projection(x), pad_mask, training, rng, keep_attention,
                                         last_only=True)
            z = hidden[:, -1, :]
            e = self._frailty("frailty", rows) if self.kind == "fact" else None
            out = self.risk_head(z, e)
        if not np.all(np.isfinite(out.data)):
            raise NumericFailure(f"non-finite risk from {self.kind} model")
        return out

    def predict(self, windows, batch_size: int = 4096) -> np.ndarray:
        rows, _ = self.rows_for(windows.driver_ids)
        out = np.empty(len(windows))
        with ad.no_grad():
            for s in range(0, len(windows), batch_size):
                sl = slice(s, s + batch_size)
                out[sl] = self.forward(windows.features[sl], windows.pad_mask[sl], rows[sl]).data
        return out

    # -- persistence ----------------------------------------------------
    FORMAT_VERSION = 1

    def save(self, path) -> None:
        arrays = {f"param/{k}": v.data.astype("<f8") for k, v in self.params.items()}
        np.savez(path, format_version=np.array(self.FORMAT_VERSION), kind=np.array(self.kind),
                 config=np.array(json.dumps(asdict(self.config), sort_keys=True)),
                 param_names=np.array(list(self.params), dtype=str),
                 driver_ids=np.array(self.driver_ids, dtype=str), **arrays)

    @classmethod
    def load(cls, path) -> "RiskModel":
        path = Path(path)
        if not path.exists():
            raise MissingFile(f"no such file: {path}")
        with np.load(path, allow_pickle=False) as z:
            if int(z["format_version"]) != cls.FORMAT_VERSION:
                raise SchemaError(f"{path}: unsupported checkpoint format {int(z['format_version'])}")
            cfg = FactConfig(**json.loads(str(z["config"])))
            params = {str(name): Tensor(np.array(z[f"param/{name}"], dtype=np.float64), requires_grad=True,
                                        name=str(name)) for name in z["param_names"]}
            return cls(str(z["kind"]), cfg, params, [str(d) for d in z["driver_ids"]])


def build_model(kind: str, config: FactConfig, driver_ids: Sequence[str] = (), seed: int = 0) -> RiskModel:
    """Fresh model with uniform(+-1/sqrt(fan_in)) weights and zero frailty."""
    kind = MODEL_ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise InvalidArgument(f"unknown model kind {kind!r}")
    config.validate()
    if kind in FRAILTY_KINDS:
        if not driver_ids:
            raise InvalidArgument(f"{kind} model needs the training driver ids")
        config.n_drivers = len(driver_ids)
    rng = ad.make_rng(seed)
    p, d, n = config.n_covariates, config.hidden_dim, config.frailty_dim
    params: dict[str, Tensor] = {}

    def uni(name, shape, fan_in):
        params[name] = ad.uniform_init(rng, shape, fan_in, name)

    def const(name, shape, value):
        params[name] = Tensor(np.full(shape, value, dtype=np.float64), requires_grad=True, name=name)

    if kind in ("linear", "frailty-linear"):
        const("beta", (p, 1), 0.0)
        if kind == "frailty-linear":
            const("gamma", (config.n_drivers, 1), 0.0)
    elif kind == "mlp":
        uni("mlp.w1", (p, d), p)
        uni("mlp.b1", (d,), p)
        uni("mlp.w2", (d, d), d)
        uni("mlp.b2", (d,), d)
        uni("mlp.out.w", (d, 1), d)
        uni("mlp.out.b", (1,), d)
    else:
        uni("proj.w", (config.input_dim, d), config.input_dim)
        uni("proj.b", (d,), config.input_dim)
        f = config.ffn_mult * d
        for layer in range(config.n_layers):
            pre = f"layer{layer}."
            for w in ("q", "k", "v", "o"):
                uni(pre + "w" + w, (d, d), d)
                uni(pre + "b" + w, (d,), d)
            const(pre + "ln1.g", (d,), 1.0)
            const(pre + "ln1.b", (d,), 0.0)
            uni(pre + "ff1.w", (d, f), d)
            uni(pre + "ff1.b", (f,), d)
            uni(pre + "ff2.w", (f, d), f)
            uni(pre + "ff2.b", (d,), f)
            const(pre + "ln2.g", (d,), 1.0)
            const(pre + "ln2.b", (d,), 0.0)
        head_in = d + n if kind == "fact" else d
        uni("head.w", (head_in, 1), head_in)
        uni("head.b", (1,), head_in)
        if kind == "fact":
            const("frailty", (config.n_drivers, n), 0.0)
    return RiskModel(kind, config, params, driver_ids)


def model_forward(model: RiskModel, window, driver_id: str | None = None) -> tuple[float, bool]:
    """Score one window; returns (risk, fell_back_to_population_frailty)."""
    rows, unknown = model.rows_for([driver_id if driver_id is not None else window.driver_id])
    with ad.no_grad():
        r = model.forward(window.sequence[None], window.pad_mask[None], rows)
    return float(r.data[0]), bool(unknown[0] and model.kind in FRAILTY_KINDS)
