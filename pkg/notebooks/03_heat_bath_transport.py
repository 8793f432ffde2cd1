"""Heat-bath chain: equilibrium check, self-consistent profile and 1/N scaling.

Run with ``python notebooks/03_heat_bath_transport.py`` (about 15 s).
"""
# %%
import numpy as np

from lattice_qms import stationary_state
from lattice_qms.models import HeatBathChain, currents, fourier_scaling, self_consistent_profile

# %% [markdown]
# At equal temperatures the product Gibbs state carries no current.

# %%
chain = HeatBathChain(4, (1.0,) * 4)
rep = currents(chain, stationary_state(chain.generator()))
print("equilibrium bond currents", rep.bond_currents)

# %% [markdown]
# Bulk temperatures chosen so the bulk baths exchange no energy.

# %%
temps, j_sc, rep = self_consistent_profile(chain, 1.0, 0.9)
print("temperatures", np.round(temps, 6), f"j_sc={j_sc:.4e}")
print("bulk bath currents", rep.bath_currents[1:-1])

# %%
for row in fourier_scaling(chain, 1.0, 0.9, [4, 5, 6]):
    print(f"N={row['N']}  j_sc={row['j_sc']:.4e}  j_sc*N={row['j_sc_N']:.4e}  "
          f"max dT*N={row['max_dT_N']:.4f}")
