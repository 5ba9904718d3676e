from pathlib import Path
import sys

import pytest

ROOT = Path(__file__).resolve().parents[1]  # repo root
sys.path.insert(0, str(ROOT))

from halfline.drift import CoefFn, MidSegment, PiecewisePower, PurePower, SlowlyVarying, SlowVaryFn
from halfline.mc import SimConfig


@pytest.fixture
def flat_spec():
    """Constant-zero mid segment between M1 = 1 and M2 = 2."""
    return PiecewisePower(alpha=1.0, q=0.5, beta=1.0, p=0.5, m1=1.0, m2=2.0, mid=MidSegment(kind="constant"))


@pytest.fixture
def bridge_spec():
    return PiecewisePower(alpha=1.0, q=0.5, beta=1.0, p=0.5, m1=0.5, m2=2.0, mid=MidSegment(kind="smooth"))


@pytest.fixture
def driftless():
    return PurePower(beta=0.0, p=0.5)


@pytest.fixture
def log_spec():
    return SlowlyVarying(
        alpha=CoefFn(limit=1.0),
        beta=CoefFn(limit=1.0, amp=0.5),
        q=0.5,
        p=0.5,
        ell2=SlowVaryFn(kind="log_power", domain="at_infinity", r=1.0),
        m1=0.5,
        m2=2.0,
    )


@pytest.fixture
def small_cfg():
    return SimConfig(n_paths=2000, dt_max=1e-3, seed=7, workers=1, chunk_size=512)


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "out"
