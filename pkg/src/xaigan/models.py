"""Generator/discriminator pairs for the fully connected and convolutional GANs,
and the LeNet-5 classifier that supplies FID features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    BatchNorm,
    Conv2d,
    ConvTranspose2d,
    Dense,
    Dropout,
    Flatten,
    LeakyReLU,
    MaxPool2d,
    ReLU,
    Reshape,
    Sigmoid,
    Tanh,
)
from .network import Network

NOISE_DIM = 100
FC_GENERATOR_DIMS = [(100, 256), (256, 512), (512, 1296), (1296, 1024)]
FC_DISCRIMINATOR_DIMS = [(1024, 1296), (1296, 512), (512, 256), (256, 1)]
# output spatial size of each conv stage
DC_GENERATOR_SIZES = [4, 8, 16, 32]
DC_DISCRIMINATOR_SIZES = [16, 8, 4, 1]
DC_GENERATOR_CHANNELS = [256, 128, 64, 3]
DC_DISCRIMINATOR_CHANNELS = [64, 128, 256, 1]
LENET_FEATURE_DIM = 84


@dataclass
class GanPair:
    generator: Network
    discriminator: Network
    noise_dim: int
    image_shape: tuple

    def state_dict(self):
        out = {f"G.{k}": v for k, v in self.generator.state_dict().items()}
        out.update({f"D.{k}": v for k, v in self.discriminator.state_dict().items()})
        return out

    def load_state_dict(self, state):
        self.generator.load_state_dict({k[2:]: v for k, v in state.items() if k.startswith("G.")})
        self.discriminator.load_state_dict({k[2:]: v for k, v in state.items() if k.startswith("D.")})


def build_fc_gan(rng=None, noise_dim=NOISE_DIM, slope=0.2, dropout=0.3):
    rng = np.random.default_rng(0) if rng is None else rng
    g_layers = []
    dims = [(noise_dim, FC_GENERATOR_DIMS[0][1])] + FC_GENERATOR_DIMS[1:]
    for i, (n_in, n_out) in enumerate(dims):
        g_layers.append(Dense(n_in, n_out, rng))
        g_layers.append(LeakyReLU(slope) if i < len(dims) - 1 else Tanh())
    g_layers.append(Reshape((1, 32, 32)))

    d_layers = [Flatten()]
    for i, (n_in, n_out) in enumerate(FC_DISCRIMINATOR_DIMS):
        d_layers.append(Dense(n_in, n_out, rng))
        if i < len(FC_DISCRIMINATOR_DIMS) - 1:
            d_layers += [LeakyReLU(slope), Dropout(dropout)]
        else:
            d_layers.append(Sigmoid())
    return GanPair(Network(g_layers, "generator"), Network(d_layers, "discriminator"), noise_dim, (1, 32, 32))


def build_dc_gan(rng=None, noise_dim=NOISE_DIM, slope=0.2, dropout=0.0):
    """DC-GAN for 3x32x32 images.

    Generator: noise as a 1x1 map, transposed convs to 4, 8, 16, 32 pixels
    (kernel 4; the first stage stride 1/pad 0, the rest stride 2/pad 1).
    Discriminator mirrors it down to 16, 8, 4 and a final 4x4 valid conv to 1.
    Batchnorm follows every conv except the last of each network.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    g_layers = [Reshape((noise_dim, 1, 1))]
    chans = [noise_dim] + DC_GENERATOR_CHANNELS
    for i in range(4):
        first = i == 0
        g_layers.append(
            # batchnorm cancels a conv bias, so only the output stage keeps one
            ConvTranspose2d(chans[i], chans[i + 1], 4, 1 if first else 2, 0 if first else 1, rng, bias=i == 3)
        )
        if i < 3:
            g_layers += [BatchNorm(chans[i + 1]), LeakyReLU(slope)]
        else:
            g_layers.append(Tanh())

    d_layers = []
    chans = [3] + DC_DISCRIMINATOR_CHANNELS
    for i in range(4):
        last = i == 3
        d_layers.append(Conv2d(chans[i], chans[i + 1], 4, 1 if last else 2, 0 if last else 1, rng, bias=last))
        if not last:
            d_layers += [BatchNorm(chans[i + 1]), LeakyReLU(slope)]
            if dropout:
                d_layers.append(Dropout(dropout))
    d_layers += [Flatten(), Sigmoid()]
    return GanPair(Network(g_layers, "generator"), Network(d_layers, "discriminator"), noise_dim, (3, 32, 32))


def build_gan(architecture, rng=None, **kw):
    builders = {"fc": build_fc_gan, "dc": build_dc_gan}
    if architecture not in builders:
        raise ValueError(f"unknown architecture {architecture!r}")
    return builders[architecture](rng, **kw)


def build_lenet_classifier(num_classes=10, in_channels=1, rng=None):
    """LeNet-5 layout on 32x32 inputs: two 5x5 conv + 2x2 max-pool stages, then
    dense 400->120->84->num_classes, with ReLU activations.

    ``network.metadata["feature_stop"]`` is the layer index whose output is the
    84-d penultimate activation.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    rng = np.random.default_rng(0) if rng is None else rng
    layers = [
        Conv2d(in_channels, 6, 5, rng=rng, init="uniform"),
        ReLU(),
        MaxPool2d(2),
        Conv2d(6, 16, 5, rng=rng, init="uniform"),
        ReLU(),
        MaxPool2d(2),
        Flatten(),
        Dense(400, 120, rng),
        ReLU(),
        Dense(120, LENET_FEATURE_DIM, rng),
        ReLU(),
        Dense(LENET_FEATURE_DIM, num_classes, rng),
    ]
    net = Network(layers, "lenet")
    net.metadata["feature_stop"] = len(layers) - 1
    net.metadata["num_classes"] = num_classes
    return net
