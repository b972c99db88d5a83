"""Neural instance representations.

A set of NIRs shares one VAE (encoder + decoder) and one hypernetwork. Each
NIR owns a 64-d embedding; the hypernetwork maps it to the weights of a scorer
that predicts the normalized objective from the latent mean and std of a
solution. Freezing the shared parts and moving the embedding yields new
instances that keep the features learned from the training set.
"""

import hashlib
import json
import math
import threading
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .brkga import brkga_run
from .neural import DenseNet, kl_standard_gaussian, load_bundle, save_bundle, Adam
from .portfolio import DegenerateInstanceError, baseline_brkga_pap
from .problems import ProblemInstance, as_bits

D_EMBED = 64
HIDDEN = (128, 128)
HYPER_HIDDEN = (64,)
LAMBDA1 = 1.0
LAMBDA2 = 5e-4


def embed_input(x, d_model):
    """Map bits to +/-1 and pad with zeros or truncate to ``d_model`` columns."""
    x = as_bits(x)
    v = 2.0 * x.astype(np.float32) - 1.0
    d = v.shape[-1]
    if d > d_model:
        return np.ascontiguousarray(v[..., :d_model])
    if d < d_model:
        pad = np.zeros(v.shape[:-1] + (d_model - d,), dtype=np.float32)
        return np.concatenate([v, pad], axis=-1)
    return v


def scorer_param_count(d_I, hidden=HIDDEN):
    return DenseNet.param_count([2 * d_I, *hidden, 1])


def _acts(n_hidden, last):
    return ["leaky_relu"] * n_hidden + [last]


@dataclass
class NirOutput:
    mu: np.ndarray
    sigma: np.ndarray
    z: np.ndarray
    x_recon: np.ndarray
    y_pred: np.ndarray


class NirShared:
    """Encoder, decoder and hypernetwork shared by every NIR of a problem class."""

    def __init__(self, d_in, d_latent=None, d_embed=D_EMBED, enc_hidden=HIDDEN,
                 dec_hidden=HIDDEN, scorer_hidden=HIDDEN, hyper_hidden=HYPER_HIDDEN,
                 seed=0, dtype=np.float32, hyper_out_std=0.01, _empty=False):
        self.d_in = int(d_in)
        self.d_latent = int(d_latent or d_in)
        self.d_embed = int(d_embed)
        self.enc_hidden = tuple(enc_hidden)
        self.dec_hidden = tuple(dec_hidden)
        self.scorer_hidden = tuple(scorer_hidden)
        self.hyper_hidden = tuple(hyper_hidden)
        self.dtype = dtype
        self.scorer_sizes = [2 * self.d_latent, *self.scorer_hidden, 1]
        self.scorer_acts = _acts(len(self.scorer_hidden), "identity")
        self.n_scorer = DenseNet.param_count(self.scorer_sizes)
        # large encoded batches, reused across embeddings (e.g. normalization samples)
        self._memo = OrderedDict()
        self._memo_lock = threading.Lock()
        if _empty:
            return
        rng = np.random.default_rng(seed)
        self.encoder = DenseNet.init([self.d_in, *self.enc_hidden, 2 * self.d_latent],
                                     _acts(len(self.enc_hidden), "identity"), rng, dtype)
        self.decoder = DenseNet.init([self.d_latent, *self.dec_hidden, self.d_in],
                                     _acts(len(self.dec_hidden), "hard_tanh"), rng, dtype)
        self.hypernet = DenseNet.init([self.d_embed, *self.hyper_hidden, self.n_scorer],
                                      _acts(len(self.hyper_hidden), "identity"), rng, dtype)
        # every embedding starts near one ordinary scorer initialization
        out = self.hypernet.layers[-1]
        out.weight[...] = rng.normal(0.0, hyper_out_std, size=out.weight.shape)
        out.bias[...] = DenseNet.init(self.scorer_sizes, self.scorer_acts, rng,
                                      dtype).flat_parameters()

    def architecture(self):
        return {"d_in": self.d_in, "d_latent": self.d_latent, "d_embed": self.d_embed,
                "enc_hidden": list(self.enc_hidden), "dec_hidden": list(self.dec_hidden),
                "scorer_hidden": list(self.scorer_hidden),
                "hyper_hidden": list(self.hyper_hidden)}

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters() + self.hypernet.parameters()

    # ---------------------------------------------------------------- inference

    def scorer_weights(self, e):
        return self.hypernet(np.asarray(e, dtype=self.dtype))

    def scorer(self, e):
        return DenseNet.from_flat(self.scorer_weights(e), self.scorer_sizes, self.scorer_acts)

    def encode(self, x_emb):
        out, cache = self.encoder.forward(x_emb)
        mu = out[..., :self.d_latent]
        sigma = np.exp(0.5 * out[..., self.d_latent:])
        return mu, sigma, cache

    def forward(self, e, X, rng=None):
        """Full pass; ``z`` is sampled when ``rng`` is given, else ``z = mu``."""
        x_emb = embed_input(X, self.d_in).astype(self.dtype, copy=False)
        mu, sigma, _ = self.encode(x_emb)
        z = mu if rng is None else mu + sigma * rng.standard_normal(mu.shape).astype(self.dtype)
        x_recon = self.decoder(z)
        y = self.scorer(e)(np.concatenate([mu, sigma], axis=-1))[..., 0]
        return NirOutput(mu, sigma, z, x_recon, y)

    def scorer_input(self, X):
        """``mu (+) sigma`` for bit strings ``X``; big batches are memoized."""
        key = None
        if X.shape[0] >= 4096:
            key = (X.shape, hashlib.blake2b(np.ascontiguousarray(X).tobytes(),
                                            digest_size=16).digest())
            with self._memo_lock:
                hit = self._memo.get(key)
                if hit is not None:
                    self._memo.move_to_end(key)
                    return hit
        x_emb = embed_input(X, self.d_in).astype(self.dtype, copy=False)
        mu, sigma, _ = self.encode(x_emb)
        s = np.concatenate([mu, sigma], axis=-1)
        if key is not None:
            s.setflags(write=False)
            with self._memo_lock:
                self._memo[key] = s
                while len(self._memo) > 8:
                    self._memo.popitem(last=False)
        return s

    def score(self, e, X, scorer=None, chunk=65_536):
        scorer = scorer or self.scorer(e)
        X = as_bits(X)
        out = np.empty(X.shape[0], dtype=np.float64)
        for lo in range(0, X.shape[0], chunk):
            out[lo:lo + chunk] = scorer(self.scorer_input(X[lo:lo + chunk]))[:, 0]
        return out

    # ---------------------------------------------------------------- training

    def loss_and_grads(self, E, x_emb, y, idx, eps, lambda1=LAMBDA1, lambda2=LAMBDA2):
        """Batch loss and gradients for ``parameters() + [E]``.

        The loss is the batch mean of reconstruction MSE + ``lambda1`` * squared
        prediction error + ``lambda2`` * KL; ``eps`` is the reparameterization
        noise and ``idx`` maps each row to its embedding in ``E``.
        """
        B, dz = x_emb.shape[0], self.d_latent
        enc_out, enc_cache = self.encoder.forward(x_emb)
        mu = enc_out[:, :dz]
        sigma = np.exp(0.5 * enc_out[:, dz:])
        z = mu + sigma * eps

        x_recon, dec_cache = self.decoder.forward(z)
        diff = x_recon - x_emb
        recon = float(np.mean(np.mean(diff**2, axis=1)))
        dec_grads, g_z = self.decoder.backward(dec_cache, 2.0 * diff / (self.d_in * B))
        g_mu = g_z.copy()
        g_sigma = g_z * eps

        s = np.concatenate([mu, sigma], axis=1)
        groups = np.unique(idx)
        W, hyp_cache = self.hypernet.forward(E[groups])
        g_W = np.zeros_like(W)
        g_s = np.zeros_like(s)
        sq = np.zeros(B, dtype=np.float64)
        for gi, g in enumerate(groups):
            rows = np.flatnonzero(idx == g)
            net = DenseNet.from_flat(W[gi], self.scorer_sizes, self.scorer_acts)
            yp, cache = net.forward(s[rows])
            r = yp[:, 0] - y[rows]
            sq[rows] = r**2
            sgrads, g_s[rows] = net.backward(cache, (lambda1 * 2.0 * r / B)[:, None].astype(s.dtype))
            g_W[gi] = DenseNet.flatten_grads(sgrads)
        g_mu += g_s[:, :dz]
        g_sigma += g_s[:, dz:]

        kl = kl_standard_gaussian(mu, sigma)
        g_mu += lambda2 * mu / B
        g_sigma += lambda2 * (sigma - 1.0 / sigma) / B
        g_logvar = g_sigma * 0.5 * sigma
        enc_grads, _ = self.encoder.backward(enc_cache, np.concatenate([g_mu, g_logvar], axis=1))
        hyp_grads, g_Eg = self.hypernet.backward(hyp_cache, g_W)
        g_E = np.zeros_like(E)
        g_E[groups] = g_Eg

        pred = float(np.mean(sq))
        klm = float(np.mean(kl))
        loss = recon + lambda1 * pred + lambda2 * klm
        grads = [a for pair in enc_grads + dec_grads + hyp_grads for a in pair] + [g_E]
        return {"loss": loss, "recon": recon, "pred": pred, "kl": klm}, grads

    # ---------------------------------------------------------------- persistence

    def save(self, path):
        arrays = {}
        arrays.update(self.encoder.to_arrays("encoder"))
        arrays.update(self.decoder.to_arrays("decoder"))
        arrays.update(self.hypernet.to_arrays("hypernet"))
        save_bundle(path, arrays, meta=self.architecture())

    @classmethod
    def load(cls, path):
        arrays, arch = load_bundle(path)
        shared = cls(arch["d_in"], arch["d_latent"], arch["d_embed"], arch["enc_hidden"],
                     arch["dec_hidden"], arch["scorer_hidden"], arch["hyper_hidden"], _empty=True)
        shared.encoder = DenseNet.from_arrays(arrays, "encoder",
                                              _acts(len(shared.enc_hidden), "identity"))
        shared.decoder = DenseNet.from_arrays(arrays, "decoder",
                                              _acts(len(shared.dec_hidden), "hard_tanh"))
        shared.hypernet = DenseNet.from_arrays(arrays, "hypernet",
                                               _acts(len(shared.hyper_hidden), "identity"))
        return shared


def nir_forward(shared, e, x, rng=None):
    return shared.forward(e, x, rng)


class NirInstance(ProblemInstance):
    """An NIR used as a problem instance (deterministic scoring, ``z = mu``)."""

    surrogate = True

    def __init__(self, shared, embedding, id):
        self.shared = shared
        self.embedding = np.array(embedding, dtype=shared.dtype)
        if self.embedding.shape != (shared.d_embed,):
            raise ValueError(f"embedding must have length {shared.d_embed}")
        self.embedding.setflags(write=False)
        self.dim = shared.d_in
        self.id = id
        self._scorer = shared.scorer(self.embedding)

    def _evaluate(self, X):
        return self.shared.score(self.embedding, X, scorer=self._scorer)

    def with_embedding(self, embedding, id):
        return NirInstance(self.shared, embedding, id)


def nir_as_instance(shared, e, id):
    return NirInstance(shared, e, id)


# ---------------------------------------------------------------- data


@dataclass
class TrainingSet:
    """Normalized (solution, objective) pairs for one instance, split 3:1."""

    X_train: np.ndarray
    y_train: np.ndarray
    X_valid: np.ndarray
    y_valid: np.ndarray
    y_min: float
    y_max: float


def sample_training_data(instance, n, seed, budget=800):
    """Half uniform random solutions, half from BRKGA trajectories on ``instance``."""
    if n < 8:
        raise ValueError("need at least 8 samples")
    rng = np.random.default_rng(seed)
    n_rand = n // 2
    X_rand = rng.integers(0, 2, size=(n_rand, instance.dim), dtype=np.int8)
    parts_X, parts_y = [X_rand], [instance.evaluate_batch(X_rand)]
    configs = list(baseline_brkga_pap())
    need, k = n - n_rand, 0
    while need > 0:
        run = brkga_run(configs[k % len(configs)], instance, budget,
                        int(rng.integers(2**31 - 1)), allow_partial=True, record=True)
        for X, y in run.history:
            take = min(need, X.shape[0])
            parts_X.append(X[:take])
            parts_y.append(y[:take])
            need -= take
            if need == 0:
                break
        k += 1
    X = np.vstack(parts_X)
    y = np.concatenate(parts_y)
    lo, hi = float(y.min()), float(y.max())
    if hi <= lo:
        raise DegenerateInstanceError(f"{instance.id}: constant objective over {n} samples")
    y = (y - lo) / (hi - lo)
    perm = rng.permutation(n)
    n_train = math.ceil(3 * n / 4)
    tr, va = perm[:n_train], perm[n_train:]
    return TrainingSet(X[tr], y[tr], X[va], y[va], lo, hi)


# ---------------------------------------------------------------- training


@dataclass
class NirHyper:
    lambda1: float = LAMBDA1
    lambda2: float = LAMBDA2
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    d_model: int = None
    d_embed: int = D_EMBED
    enc_hidden: tuple = HIDDEN
    dec_hidden: tuple = HIDDEN
    scorer_hidden: tuple = HIDDEN
    hyper_hidden: tuple = HYPER_HIDDEN
    hyper_out_std: float = 0.01


@dataclass
class TrainReport:
    # per epoch: {"epoch", "train_loss", "valid_recon": [...], "valid_pred": [...]}
    history: list = field(default_factory=list)
    best_epoch: int = 0

    @property
    def final(self):
        return self.history[self.best_epoch]


def validation_losses(shared, E, datasets):
    recon, pred = [], []
    for i, ds in enumerate(datasets):
        out = shared.forward(E[i], ds.X_valid)
        x_emb = embed_input(ds.X_valid, shared.d_in)
        recon.append(float(np.mean((out.x_recon - x_emb) ** 2)))
        pred.append(float(np.mean((out.y_pred.astype(np.float64) - ds.y_valid) ** 2)))
    return recon, pred


def train_nirs(datasets, hyper=None, log=None):
    """Jointly fit shared weights and one embedding per dataset.

    Returns ``(shared, embeddings, report)``; the parameters restored at the
    end are those with the lowest validation loss.
    """
    hyper = hyper or NirHyper()
    d_model = hyper.d_model or datasets[0].X_train.shape[1]
    rng = np.random.default_rng(hyper.seed)
    shared = NirShared(d_model, d_embed=hyper.d_embed, enc_hidden=hyper.enc_hidden,
                       dec_hidden=hyper.dec_hidden, scorer_hidden=hyper.scorer_hidden,
                       hyper_hidden=hyper.hyper_hidden, hyper_out_std=hyper.hyper_out_std,
                       seed=int(rng.integers(2**31 - 1)))
    E = rng.standard_normal((len(datasets), hyper.d_embed)).astype(np.float32)

    X = np.vstack([embed_input(ds.X_train, d_model) for ds in datasets])
    y = np.concatenate([ds.y_train for ds in datasets]).astype(np.float32)
    idx = np.concatenate([np.full(len(ds.y_train), i) for i, ds in enumerate(datasets)])
    params = shared.parameters() + [E]
    opt = Adam(params, lr=hyper.lr)
    report = TrainReport()

    def record(epoch, train_loss):
        recon, pred = validation_losses(shared, E, datasets)
        entry = {"epoch": epoch, "train_loss": train_loss, "valid_recon": recon,
                 "valid_pred": pred}
        report.history.append(entry)
        if log:
            log(entry)
        return float(np.mean(recon) + hyper.lambda1 * np.mean(pred))

    best = record(0, None)
    best_state = [p.copy() for p in params]
    stale = 0
    for epoch in range(1, hyper.max_epochs + 1):
        perm = rng.permutation(len(y))
        total = 0.0
        for lo in range(0, len(y), hyper.batch_size):
            b = perm[lo:lo + hyper.batch_size]
            eps = rng.standard_normal((len(b), shared.d_latent)).astype(np.float32)
            parts, grads = shared.loss_and_grads(E, X[b], y[b], idx[b], eps,
                                                 hyper.lambda1, hyper.lambda2)
            if not np.isfinite(parts["loss"]):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            opt.step(params, grads)
            total += parts["loss"] * len(b)
        score = record(epoch, total / len(y))
        if score < best:
            best, stale = score, 0
            best_state = [p.copy() for p in params]
            report.best_epoch = epoch
        else:
            stale += 1
            if stale >= hyper.patience:
                break
    for p, saved in zip(params, best_state):
        p[...] = saved
    return shared, E, report


# ---------------------------------------------------------------- checkpoints


def save_nir_checkpoint(directory, shared, embeddings, meta=None):
    """``shared.{json,bin}``, ``embeddings/<id>.f32`` and ``manifest.json``."""
    directory = Path(directory)
    (directory / "embeddings").mkdir(parents=True, exist_ok=True)
    shared.save(directory / "shared")
    for key in sorted(embeddings):
        np.asarray(embeddings[key], dtype="<f4").tofile(directory / "embeddings" / f"{key}.f32")
    manifest = {"architecture": shared.architecture(), "ids": sorted(embeddings),
                "lambda1": LAMBDA1, "lambda2": LAMBDA2, "meta": meta or {}}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_nir_checkpoint(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    shared = NirShared.load(directory / "shared")
    embeddings = {k: np.fromfile(directory / "embeddings" / f"{k}.f32", dtype="<f4")
                  for k in manifest["ids"]}
    return shared, embeddings, manifest


def hyper_to_dict(hyper):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(hyper).items()}
