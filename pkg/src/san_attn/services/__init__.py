"""Services layer - numeric kernels, attention, model, divergence, policy search and training."""
