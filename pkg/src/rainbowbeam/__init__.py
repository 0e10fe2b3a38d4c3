"""Rainbow-beam OFDM integrated sensing and communication toolkit.

Subpackages cover the full pipeline: wideband array primitives
(:mod:`~rainbowbeam.array_core`), per-subcarrier beam codebook design
(:mod:`~rainbowbeam.codebook`), radar echo synthesis (:mod:`~rainbowbeam.echo`),
single- and multi-antenna estimators (:mod:`~rainbowbeam.est_single`,
:mod:`~rainbowbeam.est_multi`), communication precoding and rates
(:mod:`~rainbowbeam.comm`), subcarrier-subset user tracking
(:mod:`~rainbowbeam.tracking`), and the Monte-Carlo experiment harness
(:mod:`~rainbowbeam.harness`).
"""

from rainbowbeam.config import SystemConfig, SPEED_OF_LIGHT
from rainbowbeam.codebook import RainbowCodebook, build_codebook

__all__ = [
    "SystemConfig",
    "SPEED_OF_LIGHT",
    "RainbowCodebook",
    "build_codebook",
]

__version__ = "0.1.0"
