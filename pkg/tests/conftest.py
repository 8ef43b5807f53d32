import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cavmag.physics import paper_cavity, paper_dispersion, paper_tls

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TWO_PI = 2 * np.pi


@pytest.fixture(scope="session")
def cav():
    return paper_cavity()


@pytest.fixture(scope="session")
def cal():
    return paper_dispersion()


@pytest.fixture(scope="session")
def tls():
    return paper_tls()


@pytest.fixture(scope="session")
def small_campaign():
    """Noiseless two-sweep campaign on a coarse grid (fast)."""
    from cavmag.synth import paper_campaign
    return paper_campaign(seed=0, snr_db=None, powers_dbm=[-140.0, -65.0], temperatures=(0.055,),
                          n_current=21, n_freq=801)


@pytest.fixture(scope="session")
def noisy_campaign():
    from cavmag.synth import paper_campaign
    return paper_campaign(seed=0, snr_db=30.0, powers_dbm=[-140.0, -90.0, -65.0], temperatures=(0.055, 0.2),
                          n_current=21, n_freq=801)
