"""Causal building blocks of the post-filter.

Feature maps are ``(batch, channels, frames, freq)``. Every block is causal
along the frame axis: output frame ``t`` depends on input frames ``<= t``.
"""

from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F


def make_lstm(input_size: int, hidden_size: int, bidirectional: bool = False) -> nn.LSTM:
    """Single-layer batch-first LSTM with one trainable bias vector per direction.

    PyTorch keeps two bias vectors per direction; the hidden-to-hidden one is
    zeroed and frozen so the trainable count is ``4 (in + hidden + 1) hidden``.
    """
    lstm = nn.LSTM(input_size, hidden_size, batch_first=True, bidirectional=bidirectional)
    for name, p in lstm.named_parameters():
        if name.startswith("bias_hh"):
            nn.init.zeros_(p)
            p.requires_grad_(False)
    return lstm


class GatedConv2d(nn.Module):
    """Gated linear unit over a (time 2, freq 3) convolution, stride (1, 2) in frequency.

    One frame of left zero padding keeps it causal; frequency is unpadded.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel=(2, 3), stride=(1, 2), activation: bool = True):
        super().__init__()
        self.kernel = tuple(kernel)
        self.conv = nn.Conv2d(in_ch, out_ch, self.kernel, stride)
        self.gate = nn.Conv2d(in_ch, out_ch, self.kernel, stride)
        self.act = nn.PReLU(out_ch) if activation else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.pad(x, (0, 0, self.kernel[0] - 1, 0))
        return self.act(self.conv(x) * torch.sigmoid(self.gate(x)))


class GatedTransConv2d(nn.Module):
    """Transposed counterpart of :class:`GatedConv2d`, doubling the frequency size.

    The transposed time kernel spills ``kernel_t - 1`` frames past the end;
    those are dropped, which keeps the block causal.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel=(2, 3), stride=(1, 2), output_padding: int = 0, activation: bool = True):
        super().__init__()
        self.kernel = tuple(kernel)
        op = (0, output_padding)
        self.conv = nn.ConvTranspose2d(in_ch, out_ch, self.kernel, stride, output_padding=op)
        self.gate = nn.ConvTranspose2d(in_ch, out_ch, self.kernel, stride, output_padding=op)
        self.act = nn.PReLU(out_ch) if activation else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t = x.shape[2]
        y = self.conv(x)[:, :, :t] * torch.sigmoid(self.gate(x)[:, :, :t])
        return self.act(y)


def encoder_freq_sizes(n_bins: int, n_layers: int, kernel_f: int = 3, stride_f: int = 2) -> list[int]:
    sizes = [n_bins]
    for _ in range(n_layers):
        sizes.append((sizes[-1] - kernel_f) // stride_f + 1)
    return sizes


def decoder_output_padding(sizes: list[int], kernel_f: int = 3, stride_f: int = 2) -> list[int]:
    """Output padding per decoder layer so the decoder retraces ``sizes`` in reverse."""
    pads = []
    for big, small in zip(sizes[-2::-1], sizes[:0:-1]):
        pads.append(big - ((small - 1) * stride_f + kernel_f))
    return pads


class FTLSTM(nn.Module):
    """Frequency-then-time recurrence with residual connections.

    A bidirectional LSTM scans the frequency bins of each frame, then a
    unidirectional LSTM per frequency bin scans the frames.
    """

    def __init__(self, channels: int, hidden: int = 128):
        super().__init__()
        self.f_lstm = make_lstm(channels, hidden, bidirectional=True)
        self.f_proj = nn.Linear(2 * hidden, channels)
        self.f_norm = nn.LayerNorm(channels)
        self.t_lstm = make_lstm(channels, hidden)
        self.t_proj = nn.Linear(hidden, channels)
        self.t_norm = nn.LayerNorm(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, t, f = x.shape
        h = x.permute(0, 2, 3, 1).reshape(b * t, f, c)
        h = h + self.f_norm(self.f_proj(self.f_lstm(h)[0]))
        h = h.reshape(b, t, f, c).permute(0, 2, 1, 3).reshape(b * f, t, c)
        h = h + self.t_norm(self.t_proj(self.t_lstm(h)[0]))
        return h.reshape(b, f, t, c).permute(0, 3, 2, 1)


def n_trainable(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
