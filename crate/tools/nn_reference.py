"""Reference forward passes for the MEN/PEN graphs, written with PyTorch.

Writes seeded weights (SDNW), an input tensor and the expected output
(both SDBF) for each case into crates/core/tests/fixtures/nn/. The Rust
parity tests load these files and compare against the crate's own
inference engine.

    python3 tools/nn_reference.py
"""

import pathlib
import struct

import numpy as np
import torch
import torch.nn.functional as F

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/nn"

MEN, PEN = 1, 2


def men_signature(c):
    sig = [("stem", 32, 2 * c)]
    for b in range(6):
        sig += [(f"blocks.{b}.conv1", 32, 32), (f"blocks.{b}.conv2", 32, 32)]
    sig.append(("head", c, 32))
    return sig


def pen_signature(c):
    return [
        ("enc0.conv1", 8, c),
        ("enc0.conv2", 8, 8),
        ("enc1.conv1", 16, 8),
        ("enc1.conv2", 16, 16),
        ("enc2.conv1", 32, 16),
        ("enc2.conv2", 32, 32),
        ("dec1.conv1", 16, 48),
        ("dec1.conv2", 16, 16),
        ("dec0.conv1", 8, 24),
        ("dec0.conv2", 8, 8),
        ("head", c, 8),
    ]


def seeded_weights(sig, seed):
    rng = np.random.default_rng(seed)
    entries = []
    for name, oc, ic in sig:
        bound = np.sqrt(6.0 / (ic * 9)) * 0.5
        w = rng.uniform(-bound, bound, size=(oc, ic, 3, 3)).astype(np.float32)
        b = rng.uniform(-0.05, 0.05, size=(oc,)).astype(np.float32)
        entries += [(f"{name}.weight", w), (f"{name}.bias", b)]
    return entries


def write_sdnw(path, arch, entries):
    with open(path, "wb") as f:
        f.write(b"SDNW")
        f.write(struct.pack("<HBI", 1, arch, len(entries)))
        for name, arr in entries:
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4").tobytes())


def write_sdbf(path, tensor):
    """tensor: (1, C, H, W) -> SDBF with channels interleaved per pixel."""
    _, c, h, w = tensor.shape
    hwc = np.ascontiguousarray(np.transpose(tensor[0], (1, 2, 0))).astype("<f4")
    with open(path, "wb") as f:
        f.write(b"SDBF")
        f.write(struct.pack("<III", h, w, c))
        f.write(hwc.tobytes())


def params(entries):
    d = {k: torch.from_numpy(v.astype(np.float64)) for k, v in entries}
    return lambda n: (d[f"{n}.weight"], d[f"{n}.bias"])


def conv(x, p):
    w, b = p
    return F.conv2d(x, w, b, stride=1, padding=1)


def men_forward(x, entries):
    p = params(entries)
    h = conv(x, p("stem"))
    for b in range(6):
        r = conv(F.relu(conv(h, p(f"blocks.{b}.conv1"))), p(f"blocks.{b}.conv2"))
        h = h + r
    return torch.sigmoid(conv(h, p("head")))


def pen_forward(x, entries):
    p = params(entries)
    _, _, hh, ww = x.shape
    ph, pw = -(-hh // 4) * 4, -(-ww // 4) * 4
    if (ph, pw) != (hh, ww):
        x = F.pad(x, (0, pw - ww, 0, ph - hh), mode="reflect")

    def pair(t, a, b):
        return F.relu(conv(F.relu(conv(t, p(a))), p(b)))

    e0 = pair(x, "enc0.conv1", "enc0.conv2")
    e1 = pair(F.avg_pool2d(e0, 2), "enc1.conv1", "enc1.conv2")
    e2 = pair(F.avg_pool2d(e1, 2), "enc2.conv1", "enc2.conv2")
    up = lambda t: F.interpolate(t, scale_factor=2, mode="nearest")
    d1 = pair(torch.cat([up(e2), e1], 1), "dec1.conv1", "dec1.conv2")
    d0 = pair(torch.cat([up(d1), e0], 1), "dec0.conv1", "dec0.conv2")
    out = conv(d0, p("head"))
    return out[:, :, :hh, :ww]


def make_input(rng, c, h, w):
    # float32-representable values so the SDBF copy is exact
    return rng.uniform(0.0, 1.5, size=(1, c, h, w)).astype(np.float32).astype(np.float64)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(2024)
    cases = [
        ("men_c1", MEN, men_signature(1), men_forward, (2, 8, 8), 11),
        ("men_c3", MEN, men_signature(3), men_forward, (6, 8, 8), 12),
        ("pen_c1", PEN, pen_signature(1), pen_forward, (1, 10, 13), 13),
        ("pen_c3", PEN, pen_signature(3), pen_forward, (3, 8, 8), 14),
    ]
    for name, arch, sig, fwd, (c, h, w), seed in cases:
        entries = seeded_weights(sig, seed)
        x = make_input(rng, c, h, w)
        with torch.no_grad():
            y = fwd(torch.from_numpy(x), entries).numpy()
        write_sdnw(OUT / f"{name}.sdnw", arch, entries)
        write_sdbf(OUT / f"{name}_input.sdbf", x)
        write_sdbf(OUT / f"{name}_expected.sdbf", y)
        print(f"{name}: in {x.shape} out {y.shape} range [{y.min():.4f}, {y.max():.4f}]")


if __name__ == "__main__":
    main()
