"""Direct T1/T2 quantification from spiral MRF k-space.

Modules: ``core`` (FFT, direct DFT, tensor files), ``phantom``, ``sequence``
(fingerprints, dictionaries), ``trajectory`` (spirals, stacking, KNN features),
``gridding`` (kernels, DCF, NUFFT, reconstruction), ``matching`` (DM/SDM),
``neuralnet`` (micro-network + U-Net, training), ``metrics``, ``pipeline``
(experiments) and ``cli``.
"""
__version__ = "0.1.0"
