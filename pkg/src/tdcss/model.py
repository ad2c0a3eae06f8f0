"""Aggregate of every trainable parameter group, with two width presets.

The full-feature preset mirrors the published layer widths (2048-D
inputs, 1800-wide extractor, 1024-D latents); the desk preset scales
every width off the synthetic feature dimension so a complete training
run finishes in minutes on one CPU core.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import compat as cp
from . import disentangler as dis
from . import numkernel as nk
from . import synthesis as sy
from .errors import ConfigError, UsageError


@dataclass
class ModelDims:
    feature_dim: int
    semantic_dim: int
    extractor_hidden: int
    extractor_out: int
    encoder_hidden: int
    latent_dim: int
    compat_hidden: tuple
    recon_hidden: tuple
    convert_hidden: tuple
    domain_hidden: int
    mine_hidden: int = 256

    @classmethod
    def desk(cls, feature_dim, semantic_dim, latent_dim=0):
        latent = latent_dim or feature_dim
        half = max(latent // 2, 8)
        return cls(
            feature_dim=feature_dim, semantic_dim=semantic_dim,
            extractor_hidden=feature_dim, extractor_out=latent,
            encoder_hidden=latent, latent_dim=latent,
            compat_hidden=(latent, half), recon_hidden=(latent, latent),
            convert_hidden=(latent, half), domain_hidden=latent,
        )

    @classmethod
    def paper(cls, feature_dim=2048, semantic_dim=85):
        return cls(
            feature_dim=feature_dim, semantic_dim=semantic_dim,
            extractor_hidden=feature_dim, extractor_out=1800,
            encoder_hidden=1800, latent_dim=1024,
            compat_hidden=(1024, 512), recon_hidden=(1024, 1800),
            convert_hidden=(1024, 512), domain_hidden=1024,
        )

    def to_dict(self):
        d = self.__dict__.copy()
        d["compat_hidden"] = list(self.compat_hidden)
        d["recon_hidden"] = list(self.recon_hidden)
        d["convert_hidden"] = list(self.convert_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("compat_hidden", "recon_hidden", "convert_hidden"):
            d[key] = tuple(d[key])
        return cls(**d)


class Model:
    """All parameter groups plus the latent bookkeeping between them.

    With ``split_latent`` (the no-disentanglement ablation) the two
    factors are just the halves of the extractor output and the
    dedicated encoder branches do not exist.
    """

    def __init__(self, dims, nets, compat_head, center, edges, domain,
                 split_latent=False):
        self.dims = dims
        self.nets = nets            # DisentangleNets or None
        self.compat = compat_head
        self.center = center        # Net or None
        self.edges = edges          # list of Nets
        self.domain = domain        # Net or None
        self.split_latent = split_latent
        self.mine_ema = None

    @classmethod
    def create(cls, rng, dims, n_edge=2, split_latent=False,
               with_center=True, with_edges=True, compat_mode="mlp",
               dtype=np.float32):
        if split_latent:
            if dims.extractor_out % 2:
                raise ConfigError(
                    "split-latent mode needs an even extractor width, got "
                    f"{dims.extractor_out}")
            latent = dims.extractor_out // 2
            extractor = nk.Net.create(
                rng,
                [dims.feature_dim, dims.extractor_hidden, dims.extractor_out],
                ["relu", "relu"], name="extractor", dtype=dtype)
            nets = dis.DisentangleNets(extractor, None, None, None, None)
        else:
            latent = dims.latent_dim
            nets = dis.DisentangleNets.create(rng, dims, dtype)
        compat_head = cp.CompatHead.create(
            rng, latent, dims.semantic_dim, hidden=dims.compat_hidden,
            mode=compat_mode, dtype=dtype)
        center = None
        if with_center:
            center = sy.convert_net(rng, dims.semantic_dim, latent,
                                    dims.convert_hidden, dtype, "center_net")
        edges = []
        if with_edges:
            edges = [
                sy.convert_net(rng, dims.semantic_dim, latent,
                               dims.convert_hidden, dtype, f"edge_net{k}")
                for k in range(n_edge)
            ]
        domain = sy.domain_net(rng, latent, dims.domain_hidden,
                               dtype) if with_center else None
        model = cls(dims, nets, compat_head, center, edges, domain,
                    split_latent)
        return model

    @property
    def latent_dim(self):
        if self.split_latent:
            return self.dims.extractor_out // 2
        return self.dims.latent_dim

    def edge_net(self, k):
        if not 0 <= k < len(self.edges):
            raise UsageError(
                f"edge net index {k} out of range, have {len(self.edges)}")
        return self.edges[k]

    # -- encoding ----------------------------------------------------

    def encode(self, x):
        """(LatentPair, cache); halves of the extractor output in
        split mode, the two encoder branches otherwise."""
        if self.split_latent:
            shared, c_shared = self.nets.extractor.forward(x)
            half = shared.shape[1] // 2
            pair = dis.LatentPair(shared[:, :half], shared[:, half:])
            return pair, c_shared
        return dis.encode(x, self.nets)

    def encode_backward(self, d_hcor, d_hind, cache):
        if self.split_latent:
            n = None
            for d in (d_hcor, d_hind):
                if d is not None:
                    n = d.shape[0]
            if n is None:
                raise UsageError("encode_backward needs a latent gradient")
            half = self.dims.extractor_out // 2
            d_shared = np.zeros((n, self.dims.extractor_out),
                                dtype=self.nets.extractor.params()[0].dtype)
            if d_hcor is not None:
                d_shared[:, :half] = d_hcor
            if d_hind is not None:
                d_shared[:, half:] = d_hind
            _, g_ext = self.nets.extractor.backward(d_shared, cache)
            return {"extractor": g_ext, "cor": None, "ind": None}
        return dis.encode_backward(self.nets, d_hcor, d_hind, cache)

    def encode_cor(self, x):
        if self.split_latent:
            shared, _ = self.nets.extractor.forward(x)
            return shared[:, :shared.shape[1] // 2]
        return dis.encode_cor(x, self.nets)

    def predict(self, x, semantics, class_ids, batch=1024):
        """Argmax compatibility labels over the given classes."""
        out = []
        for start in range(0, x.shape[0], batch):
            h = self.encode_cor(np.ascontiguousarray(x[start:start + batch]))
            out.append(cp.predict_from_latent(self.compat, h, semantics,
                                              class_ids))
        return np.concatenate(out) if out else np.empty(0, np.int64)

    # -- parameter bookkeeping ----------------------------------------

    def groups(self):
        """Ordered {group name: Net} over the groups that exist."""
        out = {}
        if self.nets is not None:
            for name in ("extractor", "cor", "ind", "recon"):
                net = getattr(self.nets, name)
                if net is not None:
                    out[name] = net
            if self.nets.mi_net is not None:
                out["mine"] = self.nets.mi_net
        out["compat"] = self.compat.net
        if self.center is not None:
            out["center"] = self.center
        for k, net in enumerate(self.edges):
            out[f"edge{k}"] = net
        if self.domain is not None:
            out["domain"] = self.domain
        return out

    def group_hash(self, name):
        """Content hash of one group's parameters (freeze audits)."""
        h = hashlib.sha256()
        for p in self.groups()[name].params():
            h.update(str(p.shape).encode())
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def all_hashes(self):
        return {name: self.group_hash(name) for name in self.groups()}

    def astype(self, dtype):
        clone = Model(
            self.dims,
            self.nets.astype(dtype) if self.nets is not None else None,
            self.compat.astype(dtype),
            self.center.astype(dtype) if self.center is not None else None,
            [e.astype(dtype) for e in self.edges],
            self.domain.astype(dtype) if self.domain is not None else None,
            self.split_latent,
        )
        clone.mine_ema = self.mine_ema
        return clone
