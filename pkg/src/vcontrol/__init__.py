"""Control of a V-type three-level system coupled to vibrational baths.

Modules: ``model`` (system and fields), ``bath`` (spectral densities and
correlation expansions), ``lindblad`` (master equations and decoherence
matrices), ``heom`` (hierarchical equations of motion), ``rl`` (REINFORCE
control), ``oct`` (monotonic optimal control) and ``cli``.
"""

__version__ = "0.1.0"
