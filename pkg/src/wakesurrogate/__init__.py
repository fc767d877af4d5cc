"""Wake-field surrogates: synthetic LiDAR-like data, a convolutional
autoencoder, and latent-space regressors (MLP, exact GP, sparse GP,
actively-learned GP)."""

__version__ = "0.1.0"
