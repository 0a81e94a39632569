"""Feature generators, classifiers and their ensemble.

All members of an ensemble are stored as stacked parameter arrays: generator
weights carry a leading ``n_g`` axis and classifier weights a leading
``(n_g, n_c)`` pair, so one batched matmul evaluates every member at once.
Hypothesis ``k`` (0-based) pairs classifier ``k`` with generator ``k // n_c``.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from edhkd import tensor as T
from edhkd.tensor import BatchNormState, Tensor

CHECKPOINT_VERSION = 1


@dataclass
class GeneratorConfig:
    kind: str = "moon-ann"
    input_dim: int = 2
    hidden_widths: list = field(default_factory=lambda: [32])
    feature_len: int = 32

    def __post_init__(self):
        if self.kind not in ("moon-ann", "signal-dense"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.feature_len <= 0 or any(w <= 0 for w in self.hidden_widths):
            raise ValueError("layer widths must be positive")
        if self.kind == "signal-dense" and len(self.hidden_widths) != 2:
            raise ValueError("signal-dense generator takes exactly two 1x1 channel widths")


@dataclass
class ClassifierConfig:
    input_dim: int = 32
    hidden_width: int = 64
    n_classes: int = 2


def moon_generator_config():
    return GeneratorConfig("moon-ann", 2, [32], 32)


def signal_generator_config(input_dim, channels=(8, 8), feature_len=256):
    return GeneratorConfig("signal-dense", input_dim, list(channels), feature_len)


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _Block:
    """Weight (no bias) -> batch norm -> ReLU6, stacked over leading member axes."""

    def __init__(self, weight, bn):
        self.weight = weight
        self.bn = bn

    def params(self):
        return [self.weight, self.bn.gamma, self.bn.beta]


class EnsembleModel:
    def __init__(self, gcfg, ccfg, n_g=5, n_c=5, seed=0, bn_momentum=0.1, bn_eps=1e-5):
        if n_g < 1 or n_c < 1:
            raise ValueError("n_g and n_c must be >= 1")
        if ccfg.input_dim != gcfg.feature_len:
            raise ValueError("classifier input_dim must equal the generator feature length")
        self.gcfg = gcfg
        self.ccfg = ccfg
        self.n_g = n_g
        self.n_c = n_c
        self.seed = seed
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps
        rng = np.random.default_rng(seed)
        self.gen_blocks = self._build_generators(rng)
        self.cls_blocks, self.cls_out_w, self.cls_out_b = self._build_classifiers(rng)
        self.training = True

    @property
    def n_hypotheses(self):
        return self.n_g * self.n_c

    def _bn(self, stat_shape, axis):
        return BatchNormState.create(stat_shape, axis, self.bn_momentum, self.bn_eps)

    def _build_generators(self, rng):
        g, cfg = self.n_g, self.gcfg
        blocks = []
        if cfg.kind == "moon-ann":
            widths = [cfg.input_dim] + list(cfg.hidden_widths) + [cfg.feature_len]
            for fan_in, out in zip(widths[:-1], widths[1:]):
                w = Tensor(_uniform(rng, (g, fan_in, out), fan_in), requires_grad=True)
                blocks.append(_Block(w, self._bn((g, 1, out), axis=1)))
        else:
            p = cfg.input_dim
            c1, c2 = cfg.hidden_widths
            w1 = Tensor(_uniform(rng, (g, 1, 1, c1), 1), requires_grad=True)
            w2 = Tensor(_uniform(rng, (g, 1, c1, c2), c1), requires_grad=True)
            w3 = Tensor(_uniform(rng, (g, p * c2, cfg.feature_len), p * c2), requires_grad=True)
            blocks.append(_Block(w1, self._bn((g, 1, p, c1), axis=1)))
            blocks.append(_Block(w2, self._bn((g, 1, p, c2), axis=1)))
            blocks.append(_Block(w3, self._bn((g, 1, cfg.feature_len), axis=1)))
        return blocks

    def _build_classifiers(self, rng):
        g, c, cfg = self.n_g, self.n_c, self.ccfg
        h = cfg.hidden_width
        blocks = []
        for fan_in in (cfg.input_dim, h):
            w = Tensor(_uniform(rng, (g, c, fan_in, h), fan_in), requires_grad=True)
            blocks.append(_Block(w, self._bn((g, c, 1, h), axis=2)))
        bound = 1.0 / np.sqrt(h)
        out_w = Tensor(rng.uniform(-bound, bound, size=(g, c, h, cfg.n_classes)), requires_grad=True)
        out_b = Tensor(rng.uniform(-bound, bound, size=(g, c, 1, cfg.n_classes)), requires_grad=True)
        return blocks, out_w, out_b

    def train(self):
        self._set_mode(True)
        return self

    def eval(self):
        self._set_mode(False)
        return self

    def _set_mode(self, training):
        self.training = training
        for b in self.gen_blocks + self.cls_blocks:
            b.bn.training = training

    def generator_params(self):
        return [p for b in self.gen_blocks for p in b.params()]

    def classifier_params(self):
        return [p for b in self.cls_blocks for p in b.params()] + [self.cls_out_w, self.cls_out_b]

    def parameters(self):
        return self.generator_params() + self.classifier_params()

    def generator_bn_states(self):
        return [b.bn for b in self.gen_blocks]

    def classifier_bn_states(self):
        return [b.bn for b in self.cls_blocks]

    def features(self, x, update_stats=True):
        """Global features of every generator, shape (n_g, batch, feature_len)."""
        x = T.as_tensor(x)
        if self.gcfg.kind == "moon-ann":
            h = x
            for b in self.gen_blocks:
                h = T.bn_relu6(h @ b.weight, b.bn, update_stats)
            return h
        b1, b2, b3 = self.gen_blocks
        n = x.shape[0]
        h = x.reshape(n, self.gcfg.input_dim, 1) * b1.weight
        h = T.bn_relu6(h, b1.bn, update_stats)
        h = T.bn_relu6(h @ b2.weight, b2.bn, update_stats)
        h = h.reshape(self.n_g, n, -1)
        return T.bn_relu6(h @ b3.weight, b3.bn, update_stats)

    def classify(self, feats, update_stats=True):
        """Class scores of every classifier, shape (n_g, n_c, batch, n_classes)."""
        feats = T.as_tensor(feats)
        g, n, f = feats.shape
        h = feats.reshape(g, 1, n, f)
        for b in self.cls_blocks:
            h = T.bn_relu6(h @ b.weight, b.bn, update_stats)
        return h @ self.cls_out_w + self.cls_out_b

    def forward(self, x, update_stats=True):
        feats = self.features(x, update_stats)
        return feats, self.classify(feats, update_stats)

    def probabilities(self, x):
        """Softmax outputs of all hypotheses as a numpy array (n_g, n_c, batch, N)."""
        with T.no_grad():
            _, logits = self.forward(x, update_stats=False)
            return T.softmax(logits).data

    def n_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def state_arrays(self):
        out = {}
        for i, p in enumerate(self.parameters()):
            out[f"param_{i:03d}"] = p.data
        for i, bn in enumerate(self.generator_bn_states() + self.classifier_bn_states()):
            out[f"bn_{i:03d}_mean"] = bn.running_mean
            out[f"bn_{i:03d}_var"] = bn.running_var
        return out

    def meta(self):
        return {
            "version": CHECKPOINT_VERSION,
            "class": type(self).__name__,
            "generator": asdict(self.gcfg),
            "classifier": asdict(self.ccfg),
            "n_g": self.n_g,
            "n_c": self.n_c,
            "seed": self.seed,
            "bn_momentum": self.bn_momentum,
            "bn_eps": self.bn_eps,
        }

    def save(self, path):
        arrays = self.state_arrays()
        arrays["meta"] = np.frombuffer(json.dumps(self.meta(), sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            gcfg = GeneratorConfig(**meta["generator"])
            ccfg = ClassifierConfig(**meta["classifier"])
            klass = StudentModel if meta["class"] == "StudentModel" else EnsembleModel
            if klass is StudentModel:
                model = StudentModel(gcfg, ccfg, seed=meta["seed"],
                                     bn_momentum=meta["bn_momentum"], bn_eps=meta["bn_eps"])
            else:
                model = EnsembleModel(gcfg, ccfg, meta["n_g"], meta["n_c"], meta["seed"],
                                      meta["bn_momentum"], meta["bn_eps"])
            for i, p in enumerate(model.parameters()):
                p.data = z[f"param_{i:03d}"].copy()
            for i, bn in enumerate(model.generator_bn_states() + model.classifier_bn_states()):
                bn.running_mean = z[f"bn_{i:03d}_mean"].copy()
                bn.running_var = z[f"bn_{i:03d}_var"].copy()
        return model.eval()


class StudentModel(EnsembleModel):
    """A single generator with a single classifier."""

    def __init__(self, gcfg, ccfg, seed=0, bn_momentum=0.1, bn_eps=1e-5):
        super().__init__(gcfg, ccfg, 1, 1, seed, bn_momentum, bn_eps)


def build_ensemble(gcfg, ccfg, n_g=5, n_c=5, seed=0):
    return EnsembleModel(gcfg, ccfg, n_g, n_c, seed)


def build_student(gcfg, ccfg, seed=0):
    return StudentModel(gcfg, ccfg, seed)


def hypothesis_forward(model, i, k, x):
    """Class probabilities of hypothesis (generator ``i``, classifier ``k``)."""
    if not 0 <= k < model.n_hypotheses or k // model.n_c != i:
        raise ValueError(f"classifier {k} is not attached to generator {i}")
    return model.probabilities(x)[i, k % model.n_c]


def ensemble_predict(model, x):
    """Average the hypothesis probabilities and vote by argmax (ties -> lowest class)."""
    probs = model.probabilities(x)
    avg = probs.reshape(-1, *probs.shape[2:]).mean(axis=0)
    return avg, np.argmax(avg, axis=1)


def pseudo_labels(model, x_target):
    return ensemble_predict(model, x_target)[0]
