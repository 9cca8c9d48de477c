"""Small conditional U-Net noise predictor.

Two stride-2 down blocks, a bottleneck block and two upsampling blocks with
skip connections (concatenated at half resolution, added at full resolution
to keep the widest convolution cheap). Every block is conv -> group norm -> conditioning injection
-> SiLU, where the conditioning vector combines a sinusoidal timestep
embedding and a learned per-token vector.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

from ..errors import ShapeError
from ..tensornet import ConditionEmbedding, Conv2d, GroupNorm, Inject, Module, SiLU, Upsample2x


class Token(IntEnum):
    LESION = 0
    DEGRADED = 1
    NULL = 2


class Block(Module):
    def __init__(self, c_in: int, c_out: int, emb_dim: int, rng: np.random.Generator, stride: int = 1):
        super().__init__()
        self.conv = self.add("conv", Conv2d(c_in, c_out, 3, rng, stride=stride))
        self.norm = self.add("norm", GroupNorm(c_out))
        self.inject = self.add("inject", Inject(emb_dim, c_out, rng))
        self.act = SiLU()

    def forward(self, x, emb):
        return self.act.forward(self.inject.forward(self.norm.forward(self.conv.forward(x)), emb))

    def backward(self, dy):
        dy, demb = self.inject.backward(self.act.backward(dy))
        return self.conv.backward(self.norm.backward(dy)), demb


class UNet(Module):
    def __init__(self, image_size: int, rng: np.random.Generator, base: int = 32,
                 emb_dim: int = 64, channels: int = 3):
        super().__init__()
        if image_size % 4:
            raise ShapeError(f"image_size must be divisible by 4, got {image_size}")
        self.image_size, self.base, self.emb_dim, self.channels = image_size, base, emb_dim, channels
        b = base
        self.cond = self.add("cond", ConditionEmbedding(len(Token), emb_dim, rng))
        self.inc = self.add("inc", Conv2d(channels, b, 3, rng))
        self.down1 = self.add("down1", Block(b, b, emb_dim, rng, stride=2))
        self.down2 = self.add("down2", Block(b, 2 * b, emb_dim, rng, stride=2))
        self.mid = self.add("mid", Block(2 * b, 2 * b, emb_dim, rng))
        self.up1 = self.add("up1", Block(2 * b + b, b, emb_dim, rng))
        self.up2 = self.add("up2", Block(b, b, emb_dim, rng))
        self.out = self.add("out", Conv2d(b, channels, 3, rng))
        self.out.params["W"][...] = 0.0  # start as the zero predictor (loss ~1)
        self.upsample1, self.upsample2 = Upsample2x(), Upsample2x()

    def describe(self) -> dict:
        return {"arch": "unet", "image_size": self.image_size, "base": self.base,
                "emb_dim": self.emb_dim, "channels": self.channels}

    @property
    def input_shape(self):
        return (self.channels, self.image_size, self.image_size)

    def forward(self, x: np.ndarray, t, tokens) -> np.ndarray:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"UNet expects (*, {self.input_shape}), got {x.shape}")
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (n,))
        tokens = np.broadcast_to(np.asarray(tokens, dtype=np.int64), (n,))
        emb = self.cond.forward(t, tokens)
        h0 = self.inc.forward(x)
        h1 = self.down1.forward(h0, emb)
        h2 = self.down2.forward(h1, emb)
        m = self.mid.forward(h2, emb)
        u1 = self.up1.forward(np.concatenate([self.upsample1.forward(m), h1], axis=1), emb)
        u2 = self.up2.forward(self.upsample2.forward(u1) + h0, emb)
        return self.out.forward(u2)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        b = self.base
        du2 = self.out.backward(dy)
        dh0, demb = self.up2.backward(du2)
        du1 = self.upsample2.backward(dh0)
        dcat, de = self.up1.backward(du1)
        demb += de
        dm = self.upsample1.backward(dcat[:, :2 * b])
        dh1 = dcat[:, 2 * b:].copy()
        dh2, de = self.mid.backward(dm)
        demb += de
        dh1_, de = self.down2.backward(dh2)
        demb += de
        dh0_, de = self.down1.backward(dh1 + dh1_)
        demb += de
        dx = self.inc.backward(dh0 + dh0_)
        self.cond.backward(demb)
        return dx


def build_denoiser(description: dict, seed: int = 0) -> UNet:
    return UNet(description["image_size"], np.random.default_rng(seed),
                base=description.get("base", 32), emb_dim=description.get("emb_dim", 64),
                channels=description.get("channels", 3))
