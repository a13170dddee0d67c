import numpy as np
import pytest

from boltzlab import (DispersionLaw, FormFactor, KineticModel, MomentumGrid,
                      ReservoirSpec, SpectralDensity)


def make_model(d_lat=1, n=64, beta=1.0, d_res=3, amplitudes=None, ff_amplitude=1.0,
               ff_width=1.0):
    law = DispersionLaw.cosine(d_lat, amplitudes)
    grid = MomentumGrid.build(d_lat, n)
    spec = ReservoirSpec(beta=beta, d_res=d_res,
                         form_factor=FormFactor(amplitude=ff_amplitude, width=ff_width))
    return KineticModel.build(law, grid, SpectralDensity(spec))


@pytest.fixture(scope="session")
def model_d3():
    """Default desk-scale configuration: d=1, n=64, beta=1, d_res=3."""
    return make_model()


@pytest.fixture(scope="session")
def model_d2():
    """Same lattice with the d_res=2 reservoir (correlations decay fast)."""
    return make_model(d_res=2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(987654321)
