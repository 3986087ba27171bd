import pytest
import torch
from torch import nn


class ProbeGenerator(nn.Module):
    """Smooth two-layer residual generator for gradient checks (85 parameters)."""

    delta = True

    def __init__(self, channels=1, d=1):
        super().__init__()
        self.conv1 = nn.Conv2d(channels + d, 3, 3, padding=1)
        self.conv2 = nn.Conv2d(3, channels, 3, padding=1)

    def forward(self, x, c):
        planes = c[:, :, None, None].expand(-1, -1, *x.shape[2:])
        return self.conv2(torch.tanh(self.conv1(torch.cat([x, planes], 1))))


class ProbeDiscriminator(nn.Module):
    """Smooth critic + domain head on 4x4 inputs (74 parameters for d=1)."""

    def __init__(self, channels=1, d=1):
        super().__init__()
        self.conv = nn.Conv2d(channels, 4, 3, stride=2, padding=1)
        self.critic = nn.Linear(16, 1)
        self.domain = nn.Linear(16, d)

    def forward(self, x):
        h = torch.tanh(self.conv(x)).flatten(1)
        return self.critic(h), self.domain(h)


@pytest.fixture
def probes():
    torch.manual_seed(1234)
    G = ProbeGenerator().double()
    D = ProbeDiscriminator().double()
    return G, D


@pytest.fixture
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
