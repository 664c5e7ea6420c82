import numpy as np
import pytest

from astrogate.backend import using_numba


@pytest.fixture(scope="session", autouse=True)
def warm_numba_kernels():
    """Compile the hot kernels once up front so per-test timings measure the
    operations, not the one-time JIT."""
    if not using_numba():
        return
    from astrogate.data import synthesize
    from astrogate.learner import GateConfig, Hyperparams, MlpArchitecture, train
    from astrogate.lattice import build_lattice
    from astrogate.simulate import SimParams, TransmitterSchedule, run_simulation

    g = build_lattice((1, 1, 2))
    run_simulation(g, SimParams(), TransmitterSchedule(tx_cell=0),
                   t_sim=1.0, seed=0)
    X, y = synthesize(16, 2, 1.0, seed=0)
    arch = MlpArchitecture((2, 3, 1))
    stream = np.zeros((4, arch.total_units))
    train((X, y), arch, GateConfig(), Hyperparams(), epochs=1, seed=0,
          mode="gated", signal_stream=stream)
