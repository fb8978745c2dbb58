"""Particle-system characterization with R-vine copula descriptor models.

Submodules
----------
voxel        volume loading, labeling, training weight maps
descriptors  per-particle size/shape/texture descriptors and the dataset
marginals    two-component gamma/beta mixture marginals (EM)
copulas      bivariate pair-copula families, h-functions, fitting
vine         R-vine structures, sequential estimation, density, sampling
model        composite seven-variate density and composition predictors
evaluation   scores (LL/AIC/BIC/MAE/MSE), leave-one-out cross-validation
synth        synthetic scenes and datasets with known ground truth
persist      model-document and manifest serialization
cli          command-line pipeline driver
"""

__version__ = "0.1.0"
